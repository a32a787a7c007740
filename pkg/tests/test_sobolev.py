import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from meanfield.sobolev import (DensityMeasure, DivergenceWarning, EmpiricalMeasure, FrequencyGrid,
                               TruncationWarning, difference, dirac_norm, dual_pairing, embedding_constant_probe,
                               hminus_norm, hminus_norms, hs_norm, merge_atoms, norm_table)
from meanfield.testfunctions import TestFunction, library

ATOM_GRID = FrequencyGrid.with_spacing(1, 200.0, 0.05)


def _gaussian_hminus_sq(std, m):
    # (1/2pi) int (1 + k^2)^{-m} exp(-std^2 k^2) dk
    val, _ = integrate.quad(lambda k: (1 + k * k) ** (-m) * np.exp(-std**2 * k * k), -np.inf, np.inf,
                            epsabs=0, epsrel=1e-12)
    return val / (2 * np.pi)


def test_frequency_grid_volume_and_symmetry():
    g = FrequencyGrid(2, 3.0, 61)
    assert abs(g.volume - 36.0) < 1e-12
    assert np.allclose(g.axis, -g.axis[::-1])
    assert np.all(g.weights > 0)
    with pytest.raises(ValueError):
        FrequencyGrid(1, 1.0, 10)


def test_gaussian_l2_norm_closed_form():
    f = TestFunction.gaussian_density()
    assert abs(hs_norm(f, 0.0) - (4 * np.pi) ** -0.25) < 1e-9
    assert abs(f.l2_norm() - 0.5311259660135985) < 1e-12


def test_plancherel_against_spatial_quadrature():
    for f in library(5, seed=3):
        x = np.linspace(-30, 30, 60001)
        direct = np.sqrt(integrate.trapezoid(f.value(x[:, None]) ** 2, x))
        assert abs(hs_norm(f, 0.0) - direct) <= 1e-6 * direct


def test_hs_norm_homogeneous():
    f = library(1, seed=4)[0]
    assert hs_norm(f.scaled(2.0), 1.3) == pytest.approx(2 * hs_norm(f, 1.3), rel=1e-14)


def test_fourier_accessor_matches_numerical_transform():
    f = TestFunction([1.0, -0.4], [[0.3], [-1.0]], [0.7, 1.4])
    x = np.linspace(-25, 25, 50001)
    for xi in (0.0, 0.8, 2.5):
        num = integrate.trapezoid(f.value(x[:, None]) * np.exp(-1j * xi * x), x) / np.sqrt(2 * np.pi)
        assert abs(f.fourier(np.array([[xi]]))[0] - num) <= 1e-6 * max(1.0, abs(num))


def test_dirac_norm_m1():
    assert abs(hminus_norm(EmpiricalMeasure(np.zeros((1, 1))), 1.0, ATOM_GRID) - 2**-0.5) < 1e-3
    assert dirac_norm(1.0) == pytest.approx(2**-0.5, rel=1e-14)


@given(st.floats(-50, 50))
@settings(max_examples=25, deadline=None)
def test_dirac_norm_translation_invariant(x0):
    a = hminus_norm(EmpiricalMeasure(np.array([[x0]])), 1.6, ATOM_GRID)
    assert a == pytest.approx(dirac_norm(1.6), rel=1e-12)


def test_symmetric_two_atoms_far_apart():
    a = 10.0
    mu = EmpiricalMeasure(np.array([[a], [-a]]))
    exact = 0.25 * (1 + np.exp(-2 * a))
    assert abs(hminus_norm(mu, 1.0, ATOM_GRID) ** 2 - exact) < 1e-3


def test_two_atom_difference_closed_form():
    # ||delta_0 - delta_a||_{-1}^2 = 1 - exp(-a)
    for a in (0.5, 2.0):
        mu = difference(EmpiricalMeasure(np.zeros((1, 1))), EmpiricalMeasure(np.array([[a]])))
        assert hminus_norm(mu, 1.0, ATOM_GRID) ** 2 == pytest.approx(1 - np.exp(-a), abs=1e-3)


def test_coincident_atoms_cancel():
    x = np.random.default_rng(0).normal(size=(30, 1))
    mu = difference(EmpiricalMeasure(x), EmpiricalMeasure(x[::-1].copy()))
    assert hminus_norm(mu, 1.6, ATOM_GRID) < 1e-12
    assert np.all(merge_atoms(mu.atomic_parts()) == 0)


@pytest.mark.parametrize("std,m", [(1.0, 1.0), (0.3, 1.6), (2.0, 0.7)])
def test_gaussian_density_hminus_against_quadrature(std, m):
    mu = DensityMeasure(TestFunction.gaussian_density(0.4, std))
    grid = FrequencyGrid.with_spacing(1, 60.0, 0.01)
    assert hminus_norm(mu, m, grid) ** 2 == pytest.approx(_gaussian_hminus_sq(std, m), rel=1e-6)


def test_divergence_warning_for_atoms_below_half_dimension():
    with pytest.warns(DivergenceWarning):
        hminus_norm(EmpiricalMeasure(np.zeros((1, 1))), 0.5, ATOM_GRID)


def test_truncation_warning():
    with pytest.warns(TruncationWarning):
        hs_norm(TestFunction.bump(1.0, 0.0, 0.05), 1.0, FrequencyGrid(1, 10.0, 101))


def test_dual_pairing_point_evaluation():
    h = library(1, seed=9)[0]
    assert dual_pairing(EmpiricalMeasure(np.array([[0.7]])), h) == pytest.approx(float(h.value(np.array([[0.7]]))[0]))


def test_pairing_symmetric_reflections():
    h = TestFunction.bump(1.0, 1.0, 0.8)
    mu = EmpiricalMeasure(np.array([[1.0 - 0.6], [1.0 + 0.6]]))
    assert dual_pairing(mu, h) == pytest.approx(float(h.value(np.array([[1.6]]))[0]), rel=1e-14)


def test_cauchy_schwarz_on_random_pairs():
    g = np.random.default_rng(1)
    grid = FrequencyGrid.with_spacing(1, 80.0, 0.05)
    m = 1.2
    funcs = library(10, seed=2)
    for k in range(100):
        mu = EmpiricalMeasure(g.normal(0, 2, (int(g.integers(1, 20)), 1)))
        h = funcs[k % 10]
        assert abs(dual_pairing(mu, h)) <= hminus_norm(mu, m, grid) * hs_norm(h, m) * (1 + 1e-9)


def test_embedding_probe():
    g = np.random.default_rng(5)
    out = embedding_constant_probe(1.0, ATOM_GRID, 200, g, atoms=50)
    assert out["max_norm"] <= 2**-0.5 + 1e-9
    single = embedding_constant_probe(1.0, ATOM_GRID, 1, g, atoms=1)
    assert single["max_atomic"] == pytest.approx(dirac_norm(1.0), rel=1e-12)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12))
@settings(max_examples=30, deadline=None)
def test_empirical_norm_below_dirac(xs):
    mu = EmpiricalMeasure(np.array(xs)[:, None])
    assert hminus_norm(mu, 1.6, ATOM_GRID) <= dirac_norm(1.6) * (1 + 1e-12)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=10), st.floats(0.6, 1.5), st.floats(0.1, 1.0))
@settings(max_examples=30, deadline=None)
def test_norm_decreases_in_m(xs, m, dm):
    mu = difference(EmpiricalMeasure(np.array(xs)[:, None]), DensityMeasure(TestFunction.gaussian_density()))
    a, b = hminus_norms(mu, [m, m + dm], ATOM_GRID)
    assert b <= a * (1 + 1e-12)
    assert a == pytest.approx(hminus_norm(mu, m, ATOM_GRID), rel=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       st.lists(st.floats(-5, 5), min_size=1, max_size=8))
@settings(max_examples=30, deadline=None)
def test_triangle_inequality(a, b, c):
    A, B, C = (EmpiricalMeasure(np.array(v)[:, None]) for v in (a, b, c))
    ab = hminus_norm(difference(A, B), 1.6, ATOM_GRID)
    bc = hminus_norm(difference(B, C), 1.6, ATOM_GRID)
    ac = hminus_norm(difference(A, C), 1.6, ATOM_GRID)
    assert ac <= ab + bc + 1e-12


def test_norm_table_rows():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rows = norm_table({"delta": EmpiricalMeasure(np.zeros((1, 1)))}, [0.5, 1.0], ATOM_GRID)
    assert [r["truncation_flag"] for r in rows] == [1, 0]
    assert rows[1]["value"] == pytest.approx(2**-0.5, abs=1e-3)
