import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield import particles as P
from meanfield import roughpath as rp
from meanfield.testfunctions import TestFunction, library, random_mixture

H = TestFunction.bump(1.0, 0.5, 1.0)


def _particle_germ(n=6, steps=256, seed=3, d=1, f=H):
    cfg = P.SimConfig(1.0, 1 / steps, n, d, (), P.InitialLaw.gaussian(), seed)
    traj = P.simulate_paths(cfg, P.tanh_kernel(d), keep_path=True)
    lift = rp.ito_lift(traj.increments, cfg.dt, seed=seed)
    return rp.Germ(f, rp.ControlledPath(traj.path, lift, 1.0)), traj


# -- lift ---------------------------------------------------------------------


def test_chen_on_random_triples():
    lift = rp.ito_lift(P.brownian_increments(1, 5, 128, 1 / 128, 2), 1 / 128, seed=1)
    s, u, t = np.sort(np.random.default_rng(0).integers(0, 129, (10_000, 3)), axis=1).T
    assert lift.chen_residual(t[:, None], u[:, None], s[:, None]) < 1e-12


def test_symmetric_part_is_half_square_minus_bracket():
    inc = P.brownian_increments(2, 3, 32, 1 / 32, 2)
    lift = rp.ito_lift(inc, 1 / 32, refinement=8, seed=2, keep_sub=True)
    s, t = 5, 27
    bb = lift.BB(t, s)
    sym = 0.5 * (bb + np.swapaxes(bb, -1, -2))
    b = lift.B(t, s)
    pieces = lift.sub[s:t].reshape(-1, *lift.sub.shape[2:])
    bracket = np.einsum("kpi,kpj->pij", pieces, pieces)
    assert np.max(np.abs(sym - 0.5 * (b[:, :, None] * b[:, None, :] - bracket))) < 1e-12


def test_bridge_pieces_sum_to_step():
    inc = P.brownian_increments(4, 7, 10, 0.1, 3)
    sub = rp.bridge_subincrements(inc, 0.1, 16, seed=4)
    assert np.allclose(sub.sum(axis=1), inc, atol=1e-14)


def test_ito_lift_one_dimension_error_decays_with_refinement():
    # BB_T = (B_T^2 - T) / 2 up to the quadratic-variation error of the bridge mesh
    inc = P.brownian_increments(5, 1000, 8, 1 / 8)
    rms = []
    for K in (4, 16, 64):
        lift = rp.ito_lift(inc, 1 / 8, refinement=K, seed=5)
        err = lift.BB0[-1, :, 0, 0] - 0.5 * (lift.B0[-1, :, 0] ** 2 - 1.0)
        rms.append(np.sqrt(np.mean(err**2)))
    ratios = np.array(rms[:-1]) / np.array(rms[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.5))  # K^{-1/2}: factor 2 per quadrupling


def test_zero_driver_gives_zero_lift_and_integral():
    lift = rp.ito_lift(np.zeros((16, 3, 2)), 1 / 16, seed=0)
    assert np.all(lift.B0 == 0) and np.all(lift.BB0 == 0)
    germ = rp.Germ(random_mixture(np.random.default_rng(0), d=2), rp.ControlledPath.frozen(np.ones(2), lift))
    assert np.all(rp.sewing_value(germ, 16) == 0)
    norms = rp.germ_holder_norms(germ)
    assert np.all(norms["pair_norm"] == 0) and np.all(norms["direct_norm"] == 0)


def test_non_uniform_times_rejected():
    with pytest.raises(ValueError):
        rp.ito_lift(np.zeros((3, 1)), 0.1, times=[0.0, 0.1, 0.25, 0.3])
    lift = rp.ito_lift(np.zeros((3, 1)), 1.0, times=[0.0, 0.1, 0.2, 0.3])
    assert lift.dt == pytest.approx(0.1)


def test_alpha_range_checked():
    with pytest.raises(ValueError):
        rp.ito_lift(np.zeros((3, 1)), 0.1, alpha=0.5)


def test_controlled_excess_for_particle_paths():
    germ, _ = _particle_germ()
    t, s = rp.sampled_pairs(256, 5000, np.random.default_rng(1))
    assert germ.path.controlled_excess(t, s) <= 1e-12


# -- cochain identities ---------------------------------------------------------


def _one_increment(seed):
    pts = np.random.default_rng(seed).normal(size=(4, 1))
    return lambda f, t: f.value(pts + np.cos(3 * t))


def _two_increment(seed):
    pts = np.random.default_rng(seed).normal(size=(4, 1))
    return lambda f, t, s: f.value(pts * (1 + t) - s) * (t - s) ** 0.7


times3 = st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3).map(sorted)


@given(st.integers(0, 10_000), times3)
@settings(max_examples=40, deadline=None)
def test_delta_hat_squared_vanishes(seed, tus):
    s, u, t = tus
    f = random_mixture(np.random.default_rng(seed))
    ddq = rp.delta_hat(rp.delta_hat(_one_increment(seed), 1), 2)
    assert np.max(np.abs(ddq(f, t, u, s))) < 1e-12


@given(st.integers(0, 10_000), times3)
@settings(max_examples=40, deadline=None)
def test_delta_hat_matches_delta_minus_phi(seed, tus):
    s, u, t = tus
    f = random_mixture(np.random.default_rng(seed))
    q, A = _one_increment(seed), _two_increment(seed)
    assert np.allclose(rp.delta_hat(q, 1)(f, t, s), rp.delta_hat_via_phi(q, 1)(f, t, s), atol=1e-12)
    assert np.allclose(rp.delta_hat(A, 2)(f, t, u, s), rp.delta_hat_via_phi(A, 2)(f, t, u, s), atol=1e-12)


@given(st.integers(0, 10_000), times3)
@settings(max_examples=30, deadline=None)
def test_identity_semigroup_reduces_to_delta(seed, tus):
    s, u, t = tus
    f = random_mixture(np.random.default_rng(seed))
    frozen = lambda t_, s_: 0.0  # noqa: E731
    q, A = _one_increment(seed), _two_increment(seed)
    assert np.array_equal(rp.delta_hat(q, 1, frozen)(f, t, s), rp.delta(q, 1)(f, t, s))
    assert np.array_equal(rp.delta_hat(A, 2, frozen)(f, t, u, s), rp.delta(A, 2)(f, t, u, s))


@given(st.integers(0, 10_000), st.lists(st.floats(0.0, 2.0), min_size=2, max_size=9, unique=True))
@settings(max_examples=30, deadline=None)
def test_telescoping_sum(seed, pts):
    part = sorted(pts)
    f = random_mixture(np.random.default_rng(seed))
    q = _one_increment(seed)
    lhs = rp.telescoping_sum(q, f, part)
    assert np.max(np.abs(lhs - rp.delta_hat(q, 1)(f, part[-1], part[0]))) < 1e-10


def test_delta_order_checked():
    with pytest.raises(ValueError):
        rp.delta(lambda f, t: 0.0, 3)


# -- germ and sewing --------------------------------------------------------------


def test_split_sums_to_coboundary():
    germ, _ = _particle_germ()
    end = 200
    c, b, a = rp.sampled_triples(end, 2000, np.random.default_rng(2)).T
    parts = germ.split(c, b, a, end)
    dxi = germ.twisted(c, a, end) - germ.twisted(c, b, end) - germ.twisted(b, a, end)
    assert np.max(np.abs(parts.sum(axis=0) - dxi)) < 1e-12


def test_frozen_sewing_matches_fine_riemann():
    rel = []
    for steps in (256, 1024):
        inc = P.brownian_increments(6, 60, steps, 1 / steps)
        lift = rp.ito_lift(inc, 1 / steps, seed=6, keep_sub=True)
        germ = rp.Germ(H, rp.ControlledPath.frozen(0.0, lift))
        err = rp.sewing_value(germ, steps) - rp.frozen_fine_riemann(H, 0.0, lift, steps)
        rel.append(np.sqrt(np.mean(err**2)) / rp.frozen_integrand_l2(H, 0.0, 1.0))
    assert rel[1] < 1e-3 and rel[1] < rel[0]


def test_frozen_integrand_l2_closed_form():
    # grad S_u f(0) = 0 for a bump centred at 0
    assert rp.frozen_integrand_l2(TestFunction.bump(1.0, 0.0, 1.0), 0.0, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_cauchy_gaps_contract_and_families_agree():
    germ, _ = _particle_germ(n=40, steps=384)
    dy = rp.sewing_integral(germ, 384, 4, family="dyadic")
    tri = rp.sewing_integral(germ, 384, 4, family="triadic")
    assert dy.pieces == [16, 32, 64, 128] and tri.pieces == [48, 96, 192, 384]
    dy.check_decay()
    tri.check_decay()
    gap = np.sqrt(np.mean((dy.value - tri.value) ** 2))
    assert gap <= dy.differences[-1]


def test_partition_family_validation():
    germ, _ = _particle_germ(n=2, steps=64)
    with pytest.raises(ValueError):
        rp.sewing_integral(germ, 64, family="pentadic")
    with pytest.raises(ValueError):
        rp.sewing_integral(germ, 64, 3, family="triadic")
    with pytest.raises(ValueError):
        rp.partition_sum(germ, 64, 7)


def test_cauchy_decay_error_names_level():
    res = rp.SewingResult([2, 4, 8, 16], np.zeros((4, 1)), [1.0, 0.5, 0.5], [2.0, 1.0])
    with pytest.raises(rp.CauchyDecayError, match="level 2"):
        res.check_decay(1.6)
    res.check_decay(1.4)


def test_sewing_bound_on_dyadic_sums():
    # |S_fine - Xi_{T0}| <= C_Lambda ||delta Xi||_{3 alpha} T^{3 alpha} for dyadic refinement
    germ, _ = _particle_germ(n=4, steps=128)
    norms = rp.germ_holder_norms(germ, 128, max_triples=40_000)
    alpha = germ.lift.alpha
    fine = rp.partition_sum(germ, 128, 128)
    coarse = germ.twisted(128, 0, 128)
    bound = rp.sewing_constant(alpha) * norms["direct_norm"] * 1.0 ** (3 * alpha)
    assert np.all(np.abs(fine - coarse) <= bound)
    assert np.all(norms["direct_norm"] <= norms["triple_norm"] * (1 + 1e-12))


def test_sewing_constant():
    assert rp.sewing_constant(0.4) == pytest.approx(1 / (1 - 2**-0.2), rel=1e-14)


def test_norms_linear_in_f():
    f = library(1, seed=8)[0]
    a = rp.germ_holder_norms(_particle_germ(n=3, steps=64, f=f)[0], max_triples=20_000)
    b = rp.germ_holder_norms(_particle_germ(n=3, steps=64, f=f.scaled(3.0))[0], max_triples=20_000)
    for key in ("pair_norm", "direct_norm", "triple_norm"):
        assert np.allclose(b[key], 3 * a[key], rtol=1e-12)


def test_pair_norm_stable_under_refinement():
    germ, traj = _particle_germ(n=4, steps=256)
    fine = rp.germ_holder_norms(germ, max_triples=1)["pair_norm"]
    coarse_inc = P.coarsen(traj.increments, 2)
    lift = rp.ito_lift(coarse_inc, 2 / 256, seed=3)
    cgerm = rp.Germ(H, rp.ControlledPath(traj.path[::2], lift, 1.0))
    coarse = rp.germ_holder_norms(cgerm, max_triples=1)["pair_norm"]
    assert np.all(np.abs(fine / coarse - 1) <= 0.2)


def test_small_time_bound():
    steps = 4096
    germ, _ = _particle_germ(n=5, steps=steps)
    end = steps // 1024
    t = end / steps
    norms = rp.germ_holder_norms(germ, end)
    value = rp.sewing_value(germ, end)
    assert np.all(np.abs(value) <= 2 * norms["pair_norm"] * t**germ.lift.alpha)
    assert np.all(np.abs(value) <= rp.pathwise_bound(norms, t, germ.lift.alpha))


def test_sewing_value_at_zero():
    germ, _ = _particle_germ(n=3, steps=16)
    assert np.all(rp.sewing_value(germ, 0) == 0)


def test_dyadic_triples_cover_levels():
    tr = rp.dyadic_triples(8)
    assert tr.shape == (7, 3)
    assert np.all(tr[:, 0] - tr[:, 1] == tr[:, 1] - tr[:, 2])
