"""Ito rough-path lift of Brownian drivers and sewing of semigroup-convolved integrals

    I_t = int_0^t (grad S_{t-u} f)(x_u) . dB_u

as limits of partition sums of the germ

    [A g]_{ts} = grad S_{t-s} g (x_s) . B_{ts} + D grad S_{t-s} g (x_s) : BB_{ts}.

Convention: BB_{ts}[i, j] = int_s^t B^j_{rs} dB^i_r (Ito), so Chen's relation
reads BB_{ts} = BB_{us} + BB_{tu} + B_{tu} (x) B_{us} with (a (x) b)[i, j] = a_i b_j.
All arrays are batched over independent paths (axis ``P``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import rng as rngmod
from .semigroup import apply_heat, heat_gradient, heat_hessian
from .testfunctions import TestFunction


class CauchyDecayError(AssertionError):
    pass


# -- lift -------------------------------------------------------------------


@dataclass
class RoughLift:
    dt: float
    dB: np.ndarray  # (steps, P, d)
    dBB: np.ndarray  # (steps, P, d, d) per-step iterated integrals
    alpha: float = 0.4
    refinement: int = 16
    sub: np.ndarray | None = None  # (steps, K, P, d) sub-increments when kept

    def __post_init__(self):
        if not (1 / 3 < self.alpha < 1 / 2):
            raise ValueError("alpha must lie in (1/3, 1/2)")
        steps, P, d = self.dB.shape
        B0 = np.zeros((steps + 1, P, d))
        np.cumsum(self.dB, axis=0, out=B0[1:])
        BB0 = np.zeros((steps + 1, P, d, d))
        # BB_{k+1,0} = BB_{k,0} + BB_{k+1,k} + B_{k+1,k} (x) B_{k,0}
        for k in range(steps):
            BB0[k + 1] = BB0[k] + self.dBB[k] + self.dB[k][:, :, None] * B0[k][:, None, :]
        self.B0, self.BB0 = B0, BB0

    @property
    def steps(self) -> int:
        return self.dB.shape[0]

    @property
    def paths(self) -> int:
        return self.dB.shape[1]

    @property
    def d(self) -> int:
        return self.dB.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def B(self, t, s):
        """B_{ts} for index arrays t, s; shape (..., P, d)."""
        return self.B0[t] - self.B0[s]

    def BB(self, t, s):
        """BB_{ts} = BB_{t0} - BB_{s0} - B_{ts} (x) B_{s0}."""
        bts = self.B(t, s)
        return self.BB0[t] - self.BB0[s] - bts[..., :, None] * self.B0[s][..., None, :]

    def chen_residual(self, t, u, s) -> float:
        lhs = self.BB(t, s)
        rhs = self.BB(u, s) + self.BB(t, u) + self.B(t, u)[..., :, None] * self.B(u, s)[..., None, :]
        return float(np.max(np.abs(lhs - rhs)))


def bridge_subincrements(increments: np.ndarray, dt: float, refinement: int, seed: int, start: int = 0):
    """Brownian-bridge refinement of each visible step into ``refinement`` pieces.

    Path i reads BRIDGE stream ``start + i``; the pieces of a step sum to its
    visible increment exactly up to roundoff.  Steps whose increment is
    exactly zero stay constant.
    """
    steps, P, d = increments.shape
    K = refinement
    z = rngmod.normals(seed, rngmod.BRIDGE, P, (steps, K, d), start=start)  # (P, steps, K, d)
    z = np.sqrt(dt / K) * np.transpose(z, (1, 2, 0, 3))  # (steps, K, P, d)
    sub = z - (z.sum(axis=1, keepdims=True) - increments[:, None]) / K
    # an exactly zero step is a frozen (non-Brownian) driver: keep it constant
    frozen = np.all(increments == 0, axis=-1)  # (steps, P)
    sub[np.broadcast_to(frozen[:, None, :], sub.shape[:3])] = 0.0
    return sub


def ito_lift(increments: np.ndarray, dt: float, alpha: float = 0.4, refinement: int = 16, seed: int = 0,
             start: int = 0, keep_sub: bool = False, times=None) -> RoughLift:
    """Lift a per-step increment record (steps, P, d) or (steps, d) to (B, BB)."""
    if times is not None:
        gaps = np.diff(np.asarray(times, dtype=float))
        if gaps.size and np.max(np.abs(gaps - gaps[0])) > 1e-12 * max(1.0, abs(gaps[0])):
            raise ValueError("ito_lift needs a uniform time grid")
        dt = float(gaps[0])
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[:, None, :]
    sub = bridge_subincrements(inc, dt, refinement, seed, start)
    excl = np.cumsum(sub, axis=1) - sub  # B_{r s} at the left end of each piece
    dBB = np.einsum("kbpi,kbpj->kpij", sub, excl)
    return RoughLift(dt, inc, dBB, alpha, refinement, sub if keep_sub else None)


# -- controlled paths and the germ ------------------------------------------


@dataclass
class ControlledPath:
    """Grid path x (steps + 1, P, d) with x_{ts} = derivative * B_{ts} + O(|t - s|).

    ``derivative`` is 1 for particle paths and 0 for frozen paths; in the
    frozen case the germ has no BB term.
    """

    x: np.ndarray
    lift: RoughLift
    drift_bound: float
    derivative: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.shape != self.lift.B0.shape:
            raise ValueError(f"path shape {x.shape} does not match lift {self.lift.B0.shape}")
        self.x = x

    @classmethod
    def frozen(cls, x0, lift: RoughLift) -> ControlledPath:
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (lift.paths, lift.d))
        return cls(np.broadcast_to(x0, lift.B0.shape).copy(), lift, 0.0, 0.0)

    def controlled_excess(self, t, s) -> float:
        """max of |x_ts - derivative B_ts| - drift_bound |t - s| over the given pairs (<= 0 when valid)."""
        gap = np.linalg.norm(self.x[t] - self.x[s] - self.derivative * self.lift.B(t, s), axis=-1)
        span = self.lift.dt * np.abs(np.asarray(t) - np.asarray(s))
        return float(np.max(gap - self.drift_bound * np.asarray(span)[..., None]))


def _as_col(tau):
    return np.asarray(tau, dtype=float)[..., None]  # broadcast against the path axis


@dataclass
class Germ:
    f: TestFunction
    path: ControlledPath

    @property
    def lift(self) -> RoughLift:
        return self.path.lift

    def value(self, t, s, g: TestFunction | None = None, shift=0.0):
        """[A S_shift g]_{ts} on index arrays; shape (..., P)."""
        g = self.f if g is None else g
        t, s = np.asarray(t), np.asarray(s)
        lift, x = self.lift, self.path.x
        tau = _as_col(lift.dt * (t - s) + shift)
        xs = x[s]
        out = np.einsum("...d,...d->...", heat_gradient(g, tau, xs), lift.B(t, s))
        if self.path.derivative != 0:
            hess = heat_hessian(g, tau, xs)
            out = out + self.path.derivative * np.einsum("...ij,...ij->...", hess, lift.BB(t, s))
        return out

    def __call__(self, g, t, s):
        return self.value(t, s, g)

    def twisted(self, u, v, end):
        """Xi_{uv} = [A S_{end-u} f]_{uv}: the summand of the sewing sums for I_end."""
        return self.value(u, v, shift=self.lift.dt * (np.asarray(end) - np.asarray(u)))

    def first_order(self, u, v, end):
        """Left-point Ito summand grad S_{end-v} f (x_v) . B_{uv}."""
        u, v = np.asarray(u), np.asarray(v)
        tau = _as_col(self.lift.dt * (np.asarray(end) - v))
        return np.einsum("...d,...d->...", heat_gradient(self.f, tau, self.path.x[v]), self.lift.B(u, v))

    def split(self, c, b, a, end):
        """Four-term split of delta Xi_{cba} (a < b < c) as an array (4, ..., P)."""
        lift, x, f, k = self.lift, self.path.x, self.f, self.path.derivative
        c, b, a = np.asarray(c), np.asarray(b), np.asarray(a)
        ta = _as_col(lift.dt * (end - a))
        tb = _as_col(lift.dt * (end - b))
        xa, xb = x[a], x[b]
        Bcb, Bba, BBcb = lift.B(c, b), lift.B(b, a), lift.BB(c, b)
        dot = lambda u, w: np.einsum("...d,...d->...", u, w)  # noqa: E731
        ddot = lambda u, w: np.einsum("...ij,...ij->...", u, w)  # noqa: E731
        g_ab = heat_gradient(f, ta, xb)
        h_aa = heat_hessian(f, ta, xa)
        h_ab = heat_hessian(f, ta, xb)
        A1 = dot(g_ab - heat_gradient(f, tb, xb), Bcb)
        A2 = k * ddot(h_ab - heat_hessian(f, tb, xb), BBcb)
        A3 = k * ddot(h_aa - h_ab, BBcb)
        A4 = dot(heat_gradient(f, ta, xa) - g_ab + k * np.einsum("...ij,...j->...i", h_aa, Bba), Bcb)
        return np.stack([A1, A2, A3, A4])


# -- generic cochain operators ------------------------------------------------
# A 1-increment is q(f, t); a 2-increment is A(f, t, s).  ``gap(t, s)`` gives
# the elapsed time used by the semigroup.


def _gap(t, s):
    return t - s


def heat_minus_id(f: TestFunction, tau: float) -> TestFunction:
    """(S_tau - Id) f as a mixture."""
    return apply_heat(f, tau) - f


def delta(F, order: int):
    """Classical coboundary on 1- or 2-increments."""
    if order == 1:
        return lambda f, t, s: F(f, t) - F(f, s)
    if order == 2:
        return lambda f, t, u, s: F(f, t, s) - F(f, t, u) - F(f, u, s)
    raise ValueError("order must be 1 or 2")


def phi(F, order: int, gap=_gap):
    if order == 1:
        return lambda f, t, s: F(heat_minus_id(f, gap(t, s)), s)
    if order == 2:
        return lambda f, t, u, s: F(heat_minus_id(f, gap(t, u)), u, s)
    raise ValueError("order must be 1 or 2")


def delta_hat(F, order: int, gap=_gap):
    """delta - phi, written without the cancelling terms:
    [q f]_t - [q S_{t-s} f]_s, and [A f]_{ts} - [A f]_{tu} - [A S_{t-u} f]_{us}."""
    if order == 1:
        return lambda f, t, s: F(f, t) - F(apply_heat(f, gap(t, s)), s)
    if order == 2:
        return lambda f, t, u, s: F(f, t, s) - F(f, t, u) - F(apply_heat(f, gap(t, u)), u, s)
    raise ValueError("order must be 1 or 2")


def delta_hat_via_phi(F, order: int, gap=_gap):
    d, p = delta(F, order), phi(F, order, gap)
    if order == 1:
        return lambda f, t, s: d(f, t, s) - p(f, t, s)
    return lambda f, t, u, s: d(f, t, u, s) - p(f, t, u, s)


def telescoping_sum(q, f: TestFunction, partition, gap=_gap):
    """sum_k [delta_hat q S_{t - t_{k+1}} f]_{t_{k+1} t_k} over a partition of [s, t]."""
    dq = delta_hat(q, 1, gap)
    t = partition[-1]
    total = 0.0
    for a, b in zip(partition[:-1], partition[1:]):
        total = total + dq(apply_heat(f, gap(t, b)), b, a)
    return total


# -- sewing -------------------------------------------------------------------


@dataclass
class SewingResult:
    pieces: list  # partition sizes, coarse to fine
    partial_sums: np.ndarray  # (levels, P)
    differences: list  # RMS over paths of successive-level differences
    ratios: list

    @property
    def value(self) -> np.ndarray:
        return self.partial_sums[-1]

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.ratios else float("nan")

    def check_decay(self, threshold: float = 1.1) -> None:
        if self.mean_ratio < threshold:
            bad = next((k for k, r in enumerate(self.ratios) if r < threshold), 0)
            raise CauchyDecayError(f"Cauchy gaps do not contract: mean ratio {self.mean_ratio:.3f}, "
                                   f"level {bad + 1} ({self.pieces[bad + 1]} -> {self.pieces[bad + 2]} pieces) "
                                   f"ratio {self.ratios[bad]:.3f}")

    def diagnostics(self) -> list[dict]:
        rows = []
        for k, p in enumerate(self.pieces):
            rows.append({"level": k, "pieces": p, "partial_sum_mean": float(np.mean(self.partial_sums[k])),
                         "difference": self.differences[k - 1] if k else float("nan")})
        return rows


def partition_sum(germ: Germ, end: int, pieces: int, start: int = 0, first_order: bool = False) -> np.ndarray:
    """sum over [v, u] of Xi_{uv} for ``pieces`` equal sub-intervals of [start, end]."""
    span = end - start
    if span % pieces:
        raise ValueError(f"{pieces} pieces do not fit {span} grid steps")
    pts = start + (span // pieces) * np.arange(pieces + 1)
    u, v = pts[1:], pts[:-1]
    terms = germ.first_order(u, v, end) if first_order else germ.twisted(u, v, end)
    return terms.sum(axis=0)


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def sewing_integral(germ: Germ, end: int, levels: int = 4, finest: int | None = None,
                    family: str = "dyadic", first_order: bool = False) -> SewingResult:
    """Partition sums of I_end on ``levels`` nested partitions.

    ``family`` "dyadic" uses finest / 2^k pieces (by default finest is the
    largest power of two dividing ``end``); "triadic" expects ``finest``
    divisible by 3 and uses 3 * 2^j pieces.  RMS statistics are over paths.
    """
    if family not in ("dyadic", "triadic"):
        raise ValueError("family must be dyadic or triadic")
    if finest is None:
        finest = end & -end if family == "dyadic" else end  # largest power of two dividing end
    pieces = [finest // 2 ** k for k in range(levels - 1, -1, -1)]
    if any(p < 1 or finest % p for p in pieces) or (family == "triadic" and pieces[0] % 3):
        raise ValueError("partition family does not fit the grid")
    sums = np.stack([partition_sum(germ, end, p, first_order=first_order) for p in pieces])
    diffs = [_rms(sums[k + 1] - sums[k]) for k in range(levels - 1)]
    ratios = [diffs[k] / diffs[k + 1] if diffs[k + 1] > 0 else float("inf") for k in range(levels - 2)]
    return SewingResult(pieces, sums, diffs, ratios)


def sewing_value(germ: Germ, end: int) -> np.ndarray:
    """Finest-grid sewing sum for I_end (one piece per grid step)."""
    if end == 0:
        return np.zeros(germ.lift.paths)
    return partition_sum(germ, end, end)


def frozen_fine_riemann(f: TestFunction, x0, lift: RoughLift, end: int) -> np.ndarray:
    """Left-point Riemann sum of grad S_{t-u} f (x0) . dB_u on the sub-step mesh."""
    if lift.sub is None:
        raise ValueError("lift was built without sub-increments")
    K = lift.refinement
    h = lift.dt / K
    t = lift.dt * end
    u = (np.arange(end)[:, None] * K + np.arange(K)[None, :]) * h  # (end, K)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (lift.d,))
    g = heat_gradient(f, t - u, np.broadcast_to(x0, (*u.shape, lift.d)))  # (end, K, d)
    return np.einsum("kbd,kbpd->p", g, lift.sub[:end])


def frozen_integrand_l2(f: TestFunction, x0, t: float) -> float:
    """sqrt(int_0^t |grad S_{t-u} f (x0)|^2 du): the standard deviation of the Wiener integral."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (f.d,))

    def sq(u):
        g = heat_gradient(f, t - u, x0[None, :])[0]
        return float(np.dot(g, g))

    val, _ = integrate.quad(sq, 0.0, t, limit=200, epsabs=0, epsrel=1e-10)
    return float(np.sqrt(val))


# -- Holder norms ---------------------------------------------------------------

SPLIT_EXPONENTS = ((1, 2), (2, 1), (2, 1), (1, 2))  # multiples of alpha for (|c-b|, |b-a|)


def sampled_pairs(steps: int, count: int, rng: np.random.Generator):
    total = steps * (steps + 1) // 2
    if total <= count:
        s, t = np.triu_indices(steps + 1, k=1)  # rows are the smaller index
        return t, s
    a = rng.integers(0, steps + 1, size=(count, 2))
    a = a[a[:, 0] != a[:, 1]]
    return a.max(axis=1), a.min(axis=1)


def dyadic_triples(end: int):
    """(c, b, a) midpoint triples of every dyadic level of [0, end] (end a power of two)."""
    out = []
    width = end
    while width >= 2:
        for a in range(0, end, width):
            out.append((a + width, a + width // 2, a))
        width //= 2
    return np.array(out, dtype=int).reshape(-1, 3)


def sampled_triples(end: int, count: int, rng: np.random.Generator):
    total = (end + 1) * end * (end - 1) // 6
    if total <= count:
        idx = np.array([(c, b, a) for c in range(end + 1) for b in range(c) for a in range(b)], dtype=int)
        return idx.reshape(-1, 3)
    x = np.sort(rng.integers(0, end + 1, size=(count, 3)), axis=1)
    x = x[(x[:, 0] < x[:, 1]) & (x[:, 1] < x[:, 2])]
    return x[:, ::-1]


def germ_holder_norms(germ: Germ, end: int | None = None, max_pairs: int = 200_000,
                      max_triples: int = 1_000_000, seed: int = 0, chunk: int = 4096) -> dict:
    """Discrete Holder estimates for the twisted germ of I_end, per path.

    pair_norm      sup |Xi_uv| / |u - v|^alpha
    split_norms    sup |A^i| / (|c - b|^{g_i} |b - a|^{r_i}) for the four terms
    triple_norm    sum of the split norms (single-decomposition upper bound)
    direct_norm    sup |delta Xi_cba| / |c - a|^{3 alpha}
    Dyadic midpoint triples are always included, so the sewing bound built
    from these numbers is a valid inequality for the dyadic partition sums.
    """
    lift = germ.lift
    end = lift.steps if end is None else end
    alpha, dt = lift.alpha, lift.dt
    rng = np.random.default_rng(seed)
    P = lift.paths
    cap_pairs = max(1, max_pairs // P)
    t, s = sampled_pairs(end, cap_pairs, rng)
    pair = np.zeros(P)
    for lo in range(0, t.size, chunk):
        tt, ss = t[lo:lo + chunk], s[lo:lo + chunk]
        v = np.abs(germ.twisted(tt, ss, end)) / (dt * (tt - ss))[:, None] ** alpha
        pair = np.maximum(pair, v.max(axis=0))
    trip = sampled_triples(end, max(1, max_triples // P), rng)
    if end & (end - 1) == 0:
        trip = np.concatenate([trip, dyadic_triples(end)])
    split = np.zeros((4, P))
    direct = np.zeros(P)
    for lo in range(0, trip.shape[0], chunk):
        c, b, a = trip[lo:lo + chunk].T
        parts = germ.split(c, b, a, end)
        lcb, lba = dt * (c - b), dt * (b - a)
        for i, (g, r) in enumerate(SPLIT_EXPONENTS):
            den = (lcb ** (g * alpha) * lba ** (r * alpha))[:, None]
            split[i] = np.maximum(split[i], (np.abs(parts[i]) / den).max(axis=0))
        dxi = parts.sum(axis=0)
        direct = np.maximum(direct, (np.abs(dxi) / ((dt * (c - a)) ** (3 * alpha))[:, None]).max(axis=0))
    return {"pair_norm": pair, "split_norms": split, "triple_norm": split.sum(axis=0),
            "direct_norm": direct, "pairs": int(t.size), "triples": int(trip.shape[0]), "end": end}


def sewing_constant(alpha: float) -> float:
    """C_Lambda = 1 / (1 - 2^{1 - 3 alpha})."""
    return 1.0 / (1.0 - 2.0 ** (1 - 3 * alpha))


def pathwise_bound(norms: dict, t: float, alpha: float) -> np.ndarray:
    """|I_t| <= ||A||_alpha t^alpha + C_Lambda ||delta A||_{3 alpha} t^{3 alpha}."""
    return norms["pair_norm"] * t**alpha + sewing_constant(alpha) * norms["triple_norm"] * t ** (3 * alpha)
