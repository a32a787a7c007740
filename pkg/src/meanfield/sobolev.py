"""Fourier-side Sobolev norms.

Convention (used everywhere in the package): the Fourier transform is unitary,
``F u(xi) = (2 pi)^{-d/2} int u(x) exp(-i xi.x) dx``, so a point mass has
``|F delta_x| = (2 pi)^{-d/2}`` and

    ||mu||_{-m}^2 = int (1 + |xi|^2)^{-m} |F mu(xi)|^2 dxi.

Integrals over frequency are trapezoid sums on a truncated symmetric grid.
For measures with atoms the self-interaction ("diagonal") part of
``|F mu|^2`` is constant in xi, so its contribution beyond the cutoff is known
exactly and is added back (``tail_correction``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import gammaln

from .testfunctions import TestFunction


class TruncationWarning(UserWarning):
    """Frequency cutoff too small for the integrand."""


class DivergenceWarning(UserWarning):
    """Atomic input with m <= d/2: the H^{-m} integral does not converge."""


@dataclass(frozen=True)
class FrequencyGrid:
    d: int
    cutoff: float
    points_per_axis: int
    axis: np.ndarray = field(init=False, repr=False)
    axis_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.points_per_axis % 2 != 1 or self.points_per_axis < 3:
            raise ValueError("points_per_axis must be an odd integer >= 3")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        axis = np.linspace(-self.cutoff, self.cutoff, self.points_per_axis)
        step = 2.0 * self.cutoff / (self.points_per_axis - 1)
        w = np.full(self.points_per_axis, step)
        w[0] = w[-1] = step / 2
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "axis_weights", w)

    @classmethod
    def with_spacing(cls, d: int, cutoff: float, spacing: float) -> FrequencyGrid:
        half = int(np.ceil(cutoff / spacing))
        return cls(d, cutoff, 2 * half + 1)

    @classmethod
    def for_atoms(cls, d: int = 1, cutoff: float = 200.0, spread: float = 1.0) -> FrequencyGrid:
        """Grid fine enough to resolve phase differences across ``spread``."""
        spacing = min(0.05, np.pi / (4.0 * max(spread, 1e-12)))
        return cls.with_spacing(d, cutoff, spacing)

    @classmethod
    def for_function(cls, f: TestFunction, points_per_axis: int = 4001) -> FrequencyGrid:
        return cls(f.d, 40.0 / float(np.min(f.widths)), points_per_axis)

    @property
    def spacing(self) -> float:
        return 2.0 * self.cutoff / (self.points_per_axis - 1)

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def weights(self) -> np.ndarray:
        w = self.axis_weights
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, self.axis_weights)
        return np.asarray(w).ravel()

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    def outer_shell(self, frac: float = 0.1) -> np.ndarray:
        return np.max(np.abs(self.points), axis=-1) > (1.0 - frac) * self.cutoff

    def refined(self) -> FrequencyGrid:
        return FrequencyGrid(self.d, self.cutoff, 2 * self.points_per_axis - 1)


class FourierMeasure(Protocol):
    d: int

    def fourier(self, xi: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atomic measure sum_j w_j delta_{x_j}; uniform weights 1/n by default."""

    atoms: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.atoms, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "atoms", x)
        if self.weights is None:
            w = np.full(x.shape[0], 1.0 / max(x.shape[0], 1))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (x.shape[0],):
                raise ValueError("weights must have one entry per atom")
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def atomic_weights(self) -> np.ndarray:
        return merge_atoms([(self.atoms, self.weights)])

    def atomic_parts(self) -> list:
        return [(self.atoms, self.weights)]

    def scaled(self, c: float) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.atoms, self.weights * c)

    def restricted(self, half_width: float) -> EmpiricalMeasure:
        """Drop atoms outside [-half_width, half_width]^d (weights unchanged)."""
        keep = np.all(np.abs(self.atoms) <= half_width, axis=-1)
        return EmpiricalMeasure(self.atoms[keep], self.weights[keep])

    def fourier(self, xi, chunk: int = 2048) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None] if self.d == 1 else xi[None, :]
        re = np.zeros(xi.shape[0])
        im = np.zeros(xi.shape[0])
        for lo in range(0, self.n, chunk):
            ph = xi @ self.atoms[lo : lo + chunk].T
            w = self.weights[lo : lo + chunk]
            re += np.cos(ph) @ w
            im -= np.sin(ph) @ w
        return (re + 1j * im) * (2 * np.pi) ** (-self.d / 2)

    def pair(self, h: TestFunction) -> float:
        return float(np.dot(self.weights, h.value(self.atoms)))


@dataclass(frozen=True)
class DensityMeasure:
    """Absolutely continuous measure whose density is a Gaussian mixture."""

    density: TestFunction

    @property
    def d(self) -> int:
        return self.density.d

    @property
    def atomic_weights(self) -> np.ndarray:
        return np.zeros(0)

    def atomic_parts(self) -> list:
        return []

    def fourier(self, xi):
        return self.density.fourier(xi)

    def pair(self, h: TestFunction) -> float:
        # int f h for two mixtures, closed form
        f = self.density
        a = f.amplitudes[:, None] * h.amplitudes[None, :]
        s2 = f.widths[:, None] ** 2 + h.widths[None, :] ** 2
        dc2 = np.sum((f.centers[:, None, :] - h.centers[None, :, :]) ** 2, axis=-1)
        pref = (2 * np.pi * f.widths[:, None] ** 2 * h.widths[None, :] ** 2 / s2) ** (f.d / 2)
        return float(np.sum(a * pref * np.exp(-0.5 * dc2 / s2)))


@dataclass(frozen=True)
class MeasureCombination:
    """Finite signed combination sum_k c_k mu_k."""

    terms: tuple

    @property
    def d(self) -> int:
        return self.terms[0][1].d

    def atomic_parts(self) -> list:
        out = []
        for c, mu in self.terms:
            out.extend((x, c * w) for x, w in getattr(mu, "atomic_parts", lambda: [])())
        return out

    @property
    def atomic_weights(self) -> np.ndarray:
        return merge_atoms(self.atomic_parts())

    def fourier(self, xi):
        return sum(c * mu.fourier(xi) for c, mu in self.terms)

    def pair(self, h):
        return sum(c * mu.pair(h) for c, mu in self.terms)


def merge_atoms(parts) -> np.ndarray:
    """Total weight per distinct atom location across (atoms, weights) parts.

    The high-frequency mean of |sum_j w_j exp(-i xi.x_j)|^2 is the sum of the
    squared merged weights, so coincident atoms must be combined first.
    """
    parts = [(np.asarray(x), np.asarray(w)) for x, w in parts if len(w)]
    if not parts:
        return np.zeros(0)
    x = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    _, inv = np.unique(x, axis=0, return_inverse=True)
    return np.bincount(inv.ravel(), weights=w)


def difference(mu, nu) -> MeasureCombination:
    return MeasureCombination(((1.0, mu), (-1.0, nu)))


def bessel_weight_total(m: float, d: int) -> float:
    """int_{R^d} (1 + |xi|^2)^{-m} dxi  (finite iff m > d/2)."""
    if m <= d / 2:
        return np.inf
    return float(np.exp(0.5 * d * np.log(np.pi) + gammaln(m - d / 2) - gammaln(m)))


def _transform(f, xi):
    return f.fourier(xi)


def hs_norm_info(f, s: float, grid: FrequencyGrid | None = None) -> tuple[float, bool]:
    """(norm, truncation_flag) for the H^s norm of a test function or density."""
    if grid is None:
        if not isinstance(f, TestFunction):
            raise ValueError("a FrequencyGrid is required for non-mixture inputs")
        grid = FrequencyGrid.for_function(f)
    xi = grid.points
    k2 = np.sum(xi * xi, axis=-1)
    integrand = grid.weights * (1.0 + k2) ** s * np.abs(_transform(f, xi)) ** 2
    total = float(integrand.sum())
    shell = float(integrand[grid.outer_shell()].sum())
    flagged = total > 0 and shell > 1e-6 * total
    if flagged:
        warnings.warn(
            f"H^{s} integrand keeps {shell / total:.2e} of its mass in the outer frequency shell "
            f"(cutoff {grid.cutoff:g})",
            TruncationWarning,
            stacklevel=2,
        )
    return float(np.sqrt(max(total, 0.0))), flagged


def hs_norm(f, s: float, grid: FrequencyGrid | None = None) -> float:
    return hs_norm_info(f, s, grid)[0]


def hminus_norm_info(mu, m: float, grid: FrequencyGrid, tail_correction: bool = True) -> tuple[float, bool]:
    """(||mu||_{-m}, divergence_flag).

    The transform of an empirical measure is summed directly over its atoms.
    """
    if m <= 0:
        raise ValueError("m must be positive")
    xi = grid.points
    k2 = np.sum(xi * xi, axis=-1)
    wq = grid.weights * (1.0 + k2) ** (-m)
    val = float(np.dot(wq, np.abs(mu.fourier(xi)) ** 2))
    atomic = np.asarray(getattr(mu, "atomic_weights", np.zeros(0)))
    diverges = atomic.size > 0 and np.any(atomic != 0) and m <= grid.d / 2
    if diverges:
        warnings.warn(
            f"point masses are not in H^-{m} for d={grid.d}; value depends on the cutoff",
            DivergenceWarning,
            stacklevel=2,
        )
    elif tail_correction and atomic.size:
        missing = bessel_weight_total(m, grid.d) - float(wq.sum())
        val += (2 * np.pi) ** (-grid.d) * float(np.sum(atomic**2)) * missing
    return float(np.sqrt(max(val, 0.0))), bool(diverges)


def hminus_norm(mu, m: float, grid: FrequencyGrid, tail_correction: bool = True) -> float:
    return hminus_norm_info(mu, m, grid, tail_correction)[0]


def hminus_norms(mu, ms, grid: FrequencyGrid) -> list[float]:
    """||mu||_{-m} for several m > d/2 from one evaluation of the transform."""
    xi = grid.points
    k2 = np.sum(xi * xi, axis=-1)
    power = np.abs(mu.fourier(xi)) ** 2
    atomic = np.asarray(getattr(mu, "atomic_weights", np.zeros(0)))
    a2 = float(np.sum(atomic**2)) if atomic.size else 0.0
    out = []
    for m in ms:
        if m <= grid.d / 2:
            raise ValueError("hminus_norms needs m > d/2")
        wq = grid.weights * (1.0 + k2) ** (-m)
        val = float(np.dot(wq, power)) + (2 * np.pi) ** (-grid.d) * a2 * (bessel_weight_total(m, grid.d) - wq.sum())
        out.append(float(np.sqrt(max(val, 0.0))))
    return out


def dual_pairing(mu, h: TestFunction) -> float:
    """<mu, h>: exact atom sum for empirical measures, quadrature for grid measures."""
    return float(mu.pair(h))


def dirac_norm(m: float, d: int = 1) -> float:
    """||delta_x||_{-m}, identical for every x."""
    return float(np.sqrt((2 * np.pi) ** (-d) * bessel_weight_total(m, d)))


def embedding_constant_probe(m: float, grid: FrequencyGrid, trials: int, rng: np.random.Generator,
                             atoms: int = 50, scale: float = 3.0) -> dict:
    """Largest ||mu||_{-m} seen over random probability measures.

    Half of the trials are atomic (``atoms`` equal weights), half are Gaussian
    mixtures with positive weights summing to one.
    """
    if m <= grid.d / 2:
        raise ValueError("embedding probe needs m > d/2")
    best_atomic = 0.0
    best_density = 0.0
    for k in range(trials):
        if k % 2 == 0:
            pts = rng.standard_cauchy((atoms, grid.d)) if k % 4 == 0 else rng.normal(0, scale, (atoms, grid.d))
            best_atomic = max(best_atomic, hminus_norm(EmpiricalMeasure(pts), m, grid))
        else:
            j = int(rng.integers(1, 4))
            w = rng.dirichlet(np.ones(j))
            std = np.exp(rng.uniform(np.log(0.05), np.log(3.0), j))
            amp = w * (2 * np.pi * std**2) ** (-grid.d / 2)
            dens = TestFunction(amp, rng.normal(0, scale, (j, grid.d)), std)
            best_density = max(best_density, hminus_norm(DensityMeasure(dens), m, grid))
    return {
        "max_norm": max(best_atomic, best_density),
        "max_atomic": best_atomic,
        "max_density": best_density,
        "dirac_norm": dirac_norm(m, grid.d),
    }


def norm_table(measures: dict, ms, grid: FrequencyGrid) -> list[dict]:
    """Rows (measure id, m, cutoff, points, value, truncation-flag)."""
    rows = []
    for name, mu in measures.items():
        for m in ms:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DivergenceWarning)
                value, flag = hminus_norm_info(mu, m, grid)
            rows.append({"measure": name, "m": m, "cutoff": grid.cutoff,
                         "points": grid.points_per_axis, "value": value, "truncation_flag": int(flag)})
    return rows
