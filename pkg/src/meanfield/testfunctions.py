"""Gaussian-mixture test functions with closed-form calculus.

A bump ``(a, c, sigma)`` is the unnormalised function
``a * exp(-|x - c|^2 / (2 sigma^2))`` on R^d.  Mixtures are closed under
linear combination and under the heat semigroup, which is what makes them
convenient for the semigroup and sewing checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    amplitudes: np.ndarray  # (K,)
    centers: np.ndarray  # (K, d)
    widths: np.ndarray  # (K,)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None] if c.shape[0] == a.shape[0] else c[None, :]
        s = np.atleast_1d(np.asarray(self.widths, dtype=float))
        if not (a.shape[0] == c.shape[0] == s.shape[0]):
            raise ValueError("amplitudes, centers and widths must have matching length")
        if np.any(s <= 0):
            raise ValueError("bump widths must be positive")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", s)

    @classmethod
    def bump(cls, amplitude=1.0, center=0.0, width=1.0, d=1):
        c = np.broadcast_to(np.asarray(center, dtype=float), (d,))
        return cls(np.array([amplitude]), c[None, :].copy(), np.array([width]))

    @classmethod
    def gaussian_density(cls, mean=0.0, std=1.0, d=1):
        """Unit-mass N(mean, std^2 I) density written as a single bump."""
        return cls.bump((2 * np.pi * std**2) ** (-d / 2), mean, std, d)

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def __len__(self):
        return self.amplitudes.shape[0]

    def scaled(self, factor: float) -> TestFunction:
        return TestFunction(self.amplitudes * factor, self.centers, self.widths)

    def __mul__(self, factor):
        return self.scaled(float(factor))

    __rmul__ = __mul__

    def __add__(self, other: TestFunction) -> TestFunction:
        return TestFunction(
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.concatenate([self.centers, other.centers]),
            np.concatenate([self.widths, other.widths]),
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    # -- pointwise calculus -------------------------------------------------

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        r = x[..., None, :] - self.centers  # (..., K, d)
        s2 = self.widths**2
        e = self.amplitudes * np.exp(-0.5 * np.sum(r * r, axis=-1) / s2)  # (..., K)
        return r, s2, e

    def value(self, x):
        _, _, e = self._parts(x)
        return e.sum(axis=-1)

    __call__ = value

    def gradient(self, x):
        r, s2, e = self._parts(x)
        return -np.einsum("...k,...kd->...d", e / s2, r)

    def hessian(self, x):
        r, s2, e = self._parts(x)
        d = self.d
        outer = np.einsum("...k,...ki,...kj->...ij", e / s2**2, r, r)
        return outer - np.einsum("...k->...", e / s2)[..., None, None] * np.eye(d)

    def third(self, x):
        r, s2, e = self._parts(x)
        d = self.d
        eye = np.eye(d)
        cubic = -np.einsum("...k,...ki,...kj,...kl->...ijl", e / s2**3, r, r, r)
        w = e / s2**2
        lin = (
            np.einsum("...k,ij,...kl->...ijl", w, eye, r)
            + np.einsum("...k,il,...kj->...ijl", w, eye, r)
            + np.einsum("...k,jl,...ki->...ijl", w, eye, r)
        )
        return cubic + lin

    # -- Fourier side -------------------------------------------------------

    def fourier(self, xi):
        """Unitary transform (2 pi)^{-d/2} int h(x) exp(-i xi.x) dx."""
        xi = np.asarray(xi, dtype=float)
        if self.d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
            xi = xi[..., None]
        k2 = np.sum(xi * xi, axis=-1)[..., None]  # (..., 1)
        phase = np.exp(-1j * xi @ self.centers.T)  # (..., K)
        mag = self.amplitudes * self.widths**self.d * np.exp(-0.5 * self.widths**2 * k2)
        return np.sum(mag * phase, axis=-1)

    def l2_norm(self) -> float:
        """Closed-form L^2 norm (pairwise Gaussian overlaps)."""
        a, c, s = self.amplitudes, self.centers, self.widths
        s2 = s[:, None] ** 2 + s[None, :] ** 2
        dc2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        prod = (2 * np.pi * (s[:, None] ** 2) * (s[None, :] ** 2) / s2) ** (self.d / 2)
        g = a[:, None] * a[None, :] * prod * np.exp(-0.5 * dc2 / s2)
        return float(np.sqrt(max(g.sum(), 0.0)))

    def support_window(self, nsig: float = 10.0) -> tuple[float, float]:
        """Interval (per axis) outside which every bump is below exp(-nsig^2/2)."""
        lo = np.min(self.centers - nsig * self.widths[:, None])
        hi = np.max(self.centers + nsig * self.widths[:, None])
        return float(lo), float(hi)


def random_mixture(rng: np.random.Generator, d=1, max_bumps=3, width_range=(0.3, 2.0), center_scale=2.0):
    k = int(rng.integers(1, max_bumps + 1))
    a = rng.uniform(-1.5, 1.5, size=k)
    a[np.abs(a) < 0.1] += 0.5
    c = rng.uniform(-center_scale, center_scale, size=(k, d))
    lw = rng.uniform(np.log(width_range[0]), np.log(width_range[1]), size=k)
    return TestFunction(a, c, np.exp(lw))


def library(count=20, d=1, seed=20240101, width_range=(0.3, 2.0)) -> list[TestFunction]:
    """Fixed suite of mixtures used by the semigroup and Sobolev checks."""
    rng = np.random.default_rng(seed)
    out = [TestFunction.bump(d=d), TestFunction.gaussian_density(d=d)]
    while len(out) < count:
        out.append(random_mixture(rng, d=d, width_range=width_range))
    return out[:count]
