"""Grid solver for the McKean-Vlasov equation

    d/dt nu = (1/2) Laplacian nu - div(nu (Gamma * nu)),

by Strang splitting of semi-Lagrangian transport and a spectral heat step,
plus the weak-mild residual, a Monte Carlo Picard oracle for the nonlinear
process and a Gronwall stability check.

Transport is conservative: new cell masses are differences of the old
cumulative mass, read off at the feet of the backward characteristics with a
monotone cubic (PCHIP) interpolant, so positivity holds by construction.
Mass that leaves the window [-L, L]^d is moved to a left/right tail ledger
and keeps acting on the velocity field through the kernel's far-field limits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal, special
from scipy.interpolate import CubicSpline, PchipInterpolator

from . import particles as P
from . import rng as rngmod
from .semigroup import apply_heat, heat_gradient
from .sobolev import EmpiricalMeasure, FrequencyGrid, difference, dirac_norm, hminus_norm
from .testfunctions import TestFunction

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    pass


# -- grid measures ------------------------------------------------------------


@dataclass
class GridMeasure:
    """Cell-centred density on [-L, L]^d with N cells per axis and a tail ledger.

    ``tail`` holds mass that left the window as (left, right) per axis, so
    that grid mass + sum(tail) = 1.
    """

    L: float
    N: int
    density: np.ndarray
    tail: np.ndarray = None  # (d, 2)
    t: float = 0.0

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.tail is None:
            self.tail = np.zeros((self.d, 2))

    @property
    def d(self) -> int:
        return self.density.ndim

    @property
    def h(self) -> float:
        return 2 * self.L / self.N

    @property
    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.N) + 0.5) * self.h

    @property
    def edges(self) -> np.ndarray:
        return -self.L + np.arange(self.N + 1) * self.h

    @property
    def cell_mass(self) -> np.ndarray:
        return self.density * self.h**self.d

    @property
    def mass(self) -> float:
        return float(self.cell_mass.sum())

    @property
    def tail_mass(self) -> float:
        return float(self.tail.sum())

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def atomic_weights(self) -> np.ndarray:
        return np.zeros(0)

    def atomic_parts(self) -> list:
        return []  # cell masses are quadrature weights of a density, not atoms

    def fourier(self, xi) -> np.ndarray:
        """Transform of the cell-centre quadrature of the density."""
        return EmpiricalMeasure(self.points, self.cell_mass.ravel()).fourier(xi)

    def pair(self, h) -> float:
        vals = h.value(self.points) if isinstance(h, TestFunction) else h(self.points)
        return float(np.dot(self.cell_mass.ravel(), vals))

    def restricted(self, half_width: float) -> GridMeasure:
        """Zero the density outside [-w, w]^d (same grid)."""
        keep = np.abs(self.axis) <= half_width
        mask = keep
        for _ in range(self.d - 1):
            mask = np.multiply.outer(mask, keep)
        return replace(self, density=np.where(mask, self.density, 0.0), tail=self.tail.copy())

    def with_density(self, density, tail=None, t=None) -> GridMeasure:
        return GridMeasure(self.L, self.N, density, self.tail.copy() if tail is None else tail,
                           self.t if t is None else t)


def grid_from_cdf(cdf, L: float, N: int, t: float = 0.0) -> GridMeasure:
    """1-d cell averages from an exact CDF; mass outside the window goes to the tail."""
    edges = -L + np.arange(N + 1) * (2 * L / N)
    F = cdf(edges)
    dens = np.diff(F) / (2 * L / N)
    return GridMeasure(L, N, dens, np.array([[F[0], 1.0 - F[-1]]]), t)


def gaussian_grid(L: float, N: int, mean: float = 0.0, std: float = 1.0, d: int = 1) -> GridMeasure:
    """Product N(mean, std^2) cell averages; tails recorded per axis (1-d marginal form)."""
    g1 = grid_from_cdf(lambda x: special.ndtr((x - mean) / std), L, N)
    if d == 1:
        return g1
    dens = g1.density
    for _ in range(d - 1):
        dens = np.multiply.outer(dens, g1.density)
    inside = float(dens.sum() * g1.h**d)
    tail = np.zeros((d, 2))
    tail[0] = (1.0 - inside) / 2  # total outside mass, split evenly for bookkeeping
    return GridMeasure(L, N, dens, tail)


def cauchy_grid(L: float, N: int, loc: float = 0.0, scale: float = 1.0) -> GridMeasure:
    return grid_from_cdf(lambda x: 0.5 + np.arctan((x - loc) / scale) / np.pi, L, N)


def two_cluster_grid(L: float, N: int, centre: float = 3.0, std: float = 0.5) -> GridMeasure:
    return grid_from_cdf(lambda x: 0.5 * (special.ndtr((x + centre) / std) + special.ndtr((x - centre) / std)),
                         L, N)


def grid_from_density(f: TestFunction, L: float, N: int) -> GridMeasure:
    """Midpoint samples of a mixture density; the mass deficit goes to the tail."""
    g = GridMeasure(L, N, np.zeros((N,) * f.d))
    dens = f.value(g.points).reshape((N,) * f.d)
    g.density = dens
    g.tail[0] = (1.0 - g.mass) / 2
    return g


# -- velocity field --------------------------------------------------------------


def _far_limits(kernel: P.InteractionKernel, d: int):
    """profile(+inf e_k), profile(-inf e_k) component k, used for tail mass."""
    if kernel.profile is None:
        return None
    big = 1e12
    out = np.zeros((d, 2))
    for k in range(d):
        z = np.zeros(d)
        z[k] = big
        out[k, 1] = float(np.atleast_1d(kernel.profile(z))[k])
        out[k, 0] = float(np.atleast_1d(kernel.profile(-z))[k])
    return out


def conv_gamma(nu, kernel: P.InteractionKernel, targets=None) -> np.ndarray:
    """(Gamma * nu)(x) at the grid centres (grid input) or at ``targets``.

    Grid measures with a translation-invariant kernel are convolved by FFT;
    otherwise the cell masses (or atoms) are summed directly.
    """
    if isinstance(nu, EmpiricalMeasure):
        pts = nu.atoms if targets is None else np.atleast_2d(targets)
        return kernel.mean_field(pts, nu.atoms, nu.weights)
    d = nu.d
    shape = (nu.N,) * d
    if kernel.is_zero:
        out = np.zeros((*shape, d))
    elif kernel.profile is not None and targets is None:
        offs = nu.h * np.arange(-(nu.N - 1), nu.N)
        mesh = np.meshgrid(*([offs] * d), indexing="ij")
        z = np.stack(mesh, axis=-1)  # y - x offsets
        prof = kernel.profile(z)  # (..., d)
        out = np.empty((*shape, d))
        sl = tuple(slice(nu.N - 1, 2 * nu.N - 1) for _ in range(d))
        for k in range(d):
            # v_k(x_i) = sum_j p_k(x_j - x_i) m_j  ==  (m * g)(i) with g(o) = p_k(-o)
            g = np.flip(prof[..., k])
            out[..., k] = signal.fftconvolve(nu.cell_mass, g, mode="full")[sl]
    else:
        pts = nu.points
        out = kernel.mean_field(pts, pts, nu.cell_mass.ravel()).reshape(*shape, d)
    lim = _far_limits(kernel, d)
    if lim is not None and not kernel.is_zero:
        out = out + np.sum(nu.tail * lim, axis=1)
    if targets is not None:
        # interpolate the grid field to arbitrary points (d = 1 only)
        if d != 1:
            raise ValueError("target evaluation is one-dimensional")
        return CubicSpline(nu.axis, out[:, 0])(np.asarray(targets).ravel())[:, None]
    return out


# -- sub-steps -------------------------------------------------------------------


@dataclass
class StepLog:
    t: float
    mass_drift: float
    clip_mass: float
    outflow: float


def _remap_lines(cum_mass_lines, edges, feet_lines):
    """Cumulative mass at the feet for each line (rows) with PCHIP in x."""
    out = np.empty_like(feet_lines)
    for r in range(cum_mass_lines.shape[0]):
        out[r] = PchipInterpolator(edges, cum_mass_lines[r], extrapolate=False)(feet_lines[r])
    return out


def transport(nu: GridMeasure, kernel: P.InteractionKernel, tau: float, velocity=None) -> tuple[GridMeasure, float]:
    """Move mass along the frozen field Gamma * nu for time tau.  Returns (nu', outflow)."""
    if tau == 0 or kernel.is_zero:
        return nu, 0.0
    v = conv_gamma(nu, kernel) if velocity is None else velocity
    dens = nu.density
    tail = nu.tail.copy()
    outflow = 0.0
    edges = nu.edges
    for k in range(nu.d):
        # move axis k last and flatten the others into lines
        m = np.moveaxis(dens * nu.h**nu.d, k, -1)
        vk = np.moveaxis(v[..., k], k, -1)
        lines_m = m.reshape(-1, nu.N)
        lines_v = vk.reshape(-1, nu.N)
        total = lines_m.sum(axis=1)
        cum = np.zeros((lines_m.shape[0], nu.N + 1))
        np.cumsum(lines_m, axis=1, out=cum[:, 1:])
        spline = CubicSpline(nu.axis, lines_v, axis=1, bc_type="not-a-knot")
        ve = spline(edges)  # (lines, N + 1)
        # backward characteristic by the midpoint rule
        half = np.clip(edges - 0.5 * tau * ve, -nu.L, nu.L)
        vh = _eval_lines(spline, half)
        feet = np.clip(edges - tau * vh, -nu.L, nu.L)
        Mf = _remap_lines(cum, edges, feet)
        new_lines = np.diff(Mf, axis=1)
        left = Mf[:, 0]
        right = total - Mf[:, -1]
        tail[k, 0] += float(left.sum())
        tail[k, 1] += float(right.sum())
        outflow += float(left.sum() + right.sum())
        new = new_lines.reshape(m.shape)
        dens = np.moveaxis(new, -1, k) / nu.h**nu.d
    return nu.with_density(dens, tail), outflow


def _eval_lines(spline: CubicSpline, pts: np.ndarray) -> np.ndarray:
    """Evaluate a line-batched spline (axis=1 data) at per-line points."""
    c, x = spline.c, spline.x  # c: (4, N-1, lines)
    idx = np.clip(np.searchsorted(x, pts, side="right") - 1, 0, x.size - 2)
    dx = pts - x[idx]
    lines = np.arange(pts.shape[0])[:, None]
    out = c[0][idx, lines]
    for j in range(1, 4):
        out = out * dx + c[j][idx, lines]
    return out


def heat(nu: GridMeasure, tau: float) -> tuple[GridMeasure, float]:
    """Spectral heat step on a zero-padded grid (free-space up to roundoff).

    Mass landing in the padding is moved to the tail ledger of its side.
    """
    if tau == 0:
        return nu, 0.0
    N, d = nu.N, nu.d
    pad = N // 2 + int(np.ceil(12 * np.sqrt(tau) / nu.h))
    M = N + 2 * pad
    big = np.zeros((M,) * d)
    sl = tuple(slice(pad, pad + N) for _ in range(d))
    big[sl] = nu.cell_mass
    k = 2 * np.pi * np.fft.rfftfreq(M, d=nu.h)
    kf = 2 * np.pi * np.fft.fftfreq(M, d=nu.h)
    spectrum = np.fft.rfftn(big)
    mult = np.ones(spectrum.shape)
    for ax in range(d):
        kk = k if ax == d - 1 else kf
        shape = [1] * d
        shape[ax] = kk.size
        mult = mult * np.exp(-0.5 * tau * kk**2).reshape(shape)
    out = np.fft.irfftn(spectrum * mult, s=big.shape, axes=tuple(range(d)))
    tail = nu.tail.copy()
    outflow = 0.0
    for ax in range(d):
        moved = np.moveaxis(out, ax, 0)
        lo, hi = float(moved[:pad].sum()), float(moved[pad + N:].sum())
        tail[ax, 0] += lo
        tail[ax, 1] += hi
        outflow += lo + hi
        # the mass in the padding of this axis is accounted; clear it
        moved[:pad] = 0.0
        moved[pad + N:] = 0.0
    inner = out[sl]
    return nu.with_density(inner / nu.h**d, tail), outflow


@dataclass
class MVSolverConfig:
    L: float = 20.0
    N: int = 800
    dt: float = 1.0 / 64
    T: float = 1.0
    splitting: str = "strang"
    save_every: int = 1

    def __post_init__(self):
        if self.splitting not in ("lie", "strang"):
            raise ValueError("splitting must be lie or strang")
        k = self.T / self.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError("dt must divide T")

    @property
    def h(self) -> float:
        return 2 * self.L / self.N

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def check_cfl(self, kernel: P.InteractionKernel) -> None:
        if self.dt * kernel.sup_bound > 4 * self.h:
            raise ValueError(f"dt * sup|Gamma| = {self.dt * kernel.sup_bound:g} exceeds 4h = {4 * self.h:g}")


def _clip(nu: GridMeasure, t: float) -> tuple[GridMeasure, float]:
    neg = nu.density < 0
    if not neg.any():
        return nu, 0.0
    worst = float(nu.density.min())
    clip = float(-nu.density[neg].sum() * nu.h**nu.d)
    if worst < -1e-10:
        log.info("clipped negative density %.3e at t=%.6g", worst, t)
    if clip > 1e-6:
        raise SolverFailure(f"clipped mass {clip:.3e} exceeds 1e-6 at t={t:g}")
    dens = np.where(neg, 0.0, nu.density)
    return nu.with_density(dens), clip


def mv_step(nu: GridMeasure, kernel: P.InteractionKernel, dt: float, splitting: str = "strang") -> tuple[GridMeasure, StepLog]:
    """One split step; mass drift is logged, never corrected."""
    if dt == 0:
        return nu, StepLog(nu.t, 0.0, 0.0, 0.0)
    before = nu.mass + nu.tail_mass
    out = 0.0
    if splitting == "strang":
        nu, o1 = transport(nu, kernel, 0.5 * dt)
        nu, o2 = heat(nu, dt)
        nu, o3 = transport(nu, kernel, 0.5 * dt)
        out = o1 + o2 + o3
    else:
        nu, o1 = transport(nu, kernel, dt)
        nu, o2 = heat(nu, dt)
        out = o1 + o2
    nu, clip = _clip(nu, nu.t + dt)
    nu.t = nu.t + dt
    drift = nu.mass + nu.tail_mass - before
    if abs(drift) > 1e-9:
        log.info("mass drift %.3e at t=%.6g", drift, nu.t)
    return nu, StepLog(nu.t, drift, clip, out)


@dataclass
class MVSolution:
    times: np.ndarray
    snapshots: list
    kernel: P.InteractionKernel
    logs: list = field(default_factory=list)
    _velocity: dict = field(default_factory=dict, repr=False)

    def at(self, k: int) -> GridMeasure:
        return self.snapshots[k]

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not a snapshot time")
        return k

    def velocity(self, k: int) -> np.ndarray:
        if k not in self._velocity:
            self._velocity[k] = conv_gamma(self.snapshots[k], self.kernel)
        return self._velocity[k]

    @property
    def max_mass_drift(self) -> float:
        return max((abs(e.mass_drift) for e in self.logs), default=0.0)

    def snapshot_rows(self):
        """(t, x..., density) rows for the columnar dump."""
        for t, g in zip(self.times, self.snapshots):
            for p, v in zip(g.points, g.density.ravel()):
                yield (float(t), *map(float, p), float(v))

    # pieces of the weak-mild identity
    def pair(self, s: float, h: TestFunction) -> float:
        return self._interp(s, lambda k: self.snapshots[k].pair(h))

    def drift_pair(self, s: float, tau: float, h: TestFunction) -> float:
        """<nu_s, grad S_tau h . (Gamma * nu_s)> with linear interpolation in s."""
        def at(k):
            g = self.snapshots[k]
            grad = heat_gradient(h, tau, g.points)
            v = self.velocity(k).reshape(-1, g.d)
            return float(np.dot(g.cell_mass.ravel(), np.sum(grad * v, axis=-1)))

        return self._interp(s, at)

    def _interp(self, s, fn):
        ts = self.times
        if s <= ts[0]:
            return fn(0)
        if s >= ts[-1]:
            return fn(len(ts) - 1)
        j = int(np.searchsorted(ts, s, side="right") - 1)
        w = (s - ts[j]) / (ts[j + 1] - ts[j])
        if w < 1e-14:
            return fn(j)
        return (1 - w) * fn(j) + w * fn(j + 1)


def solve(nu0: GridMeasure, kernel: P.InteractionKernel, cfg: MVSolverConfig) -> MVSolution:
    cfg.check_cfl(kernel)
    nu = nu0.with_density(nu0.density.copy(), t=0.0)
    times, snaps, logs = [0.0], [nu], []
    for k in range(cfg.steps):
        nu, entry = mv_step(nu, kernel, cfg.dt, cfg.splitting)
        logs.append(entry)
        if (k + 1) % cfg.save_every == 0:
            times.append((k + 1) * cfg.dt)
            snaps.append(nu)
    return MVSolution(np.array(times), snaps, kernel, logs)


# -- closed-form heat flow ---------------------------------------------------------


@dataclass
class HeatFlowPath:
    """nu_s = S_s nu_0 for a mixture density (zero interaction)."""

    density: TestFunction

    def measure(self, s: float):
        from .sobolev import DensityMeasure

        return DensityMeasure(apply_heat(self.density, s))

    def pair(self, s: float, h: TestFunction) -> float:
        return self.measure(s).pair(h)

    def drift_pair(self, s: float, tau: float, h: TestFunction) -> float:
        return 0.0


def weak_mild_residual(path, h: TestFunction, t: float, nodes: int = 24) -> dict:
    """|<nu_t, h> - <nu_0, S_t h> - int_0^t <nu_s, grad S_{t-s} h . Gamma*nu_s> ds|.

    The time integral uses s = t - u^2 and Gauss-Legendre nodes in u, which
    absorbs the (t - s)^{-1/2} behaviour of the integrand.
    """
    lhs = path.pair(t, h)
    free = path.pair(0.0, apply_heat(h, t))
    integral = 0.0
    if t > 0:
        x, w = np.polynomial.legendre.leggauss(nodes)
        r = np.sqrt(t)
        u = 0.5 * r * (x + 1)
        wu = 0.5 * r * w
        integral = float(sum(wk * 2 * uk * path.drift_pair(t - uk**2, uk**2, h) for uk, wk in zip(u, wu)))
    res = abs(lhs - free - integral)
    return {"t": t, "lhs": lhs, "free": free, "interaction": integral, "residual": res}


# -- H^{-m} distances between grid and empirical measures --------------------------


def hminus_distance(a, b, m: float, grid: FrequencyGrid, window: float | None = None) -> float:
    if window is not None:
        a = a.restricted(window)
        b = b.restricted(window)
    return hminus_norm(difference(a, b), m, grid)


def flow_distance(flow_a: list, flow_b: list, m: float, grid: FrequencyGrid, window=None) -> float:
    return max(hminus_distance(a, b, m, grid, window) for a, b in zip(flow_a, flow_b))


# -- Picard oracle for the nonlinear process ------------------------------------------


@dataclass
class PicardResult:
    increments: list
    noise_floor: float
    flows: list  # per iterate: list of EmpiricalMeasure at save times
    save_steps: np.ndarray
    dt: float

    @property
    def final(self) -> list:
        return self.flows[-1]

    @property
    def converged(self) -> bool:
        return self.increments[-1] < 2 * self.noise_floor

    @property
    def decreasing(self) -> bool:
        inc = self.increments
        return all(b < a for a, b in zip(inc, inc[1:]))


def empirical_noise_floor(flow: list, m: float, grid: FrequencyGrid) -> float:
    """sup_t sqrt((||delta||^2 - ||nu_t||^2) / N), with ||nu_t||^2 estimated without bias."""
    dn2 = dirac_norm(m, grid.d) ** 2
    out = 0.0
    for mu in flow:
        N = mu.n
        e2 = hminus_norm(mu, m, grid) ** 2
        nu2 = max((N * e2 - dn2) / (N - 1), 0.0)
        out = max(out, np.sqrt(max(dn2 - nu2, 0.0) / N))
    return float(out)


def nonlinear_process_oracle(kernel: P.InteractionKernel, initial: P.InitialLaw, N: int, T: float, dt: float,
                             iterations: int, seed: int, m: float, grid: FrequencyGrid, d: int = 1,
                             save_every: int = 8, window: float | None = None) -> PicardResult:
    """Picard iteration on N copies with common random numbers.

    Iterate 0 has no drift; iterate k feels Gamma convolved with the
    empirical flow of iterate k - 1 (frozen at the left end of each step).
    Increments are sup over save times of the H^{-m} distance between
    consecutive iterates.
    """
    steps = int(round(T / dt))
    x0 = initial.sample(N, d, seed)
    inc = P.brownian_increments(seed, N, steps, dt, d)
    save = np.arange(0, steps + 1, save_every)
    prev_path = None
    flows, increments = [], []
    for it in range(iterations + 1):
        x = x0.copy()
        path = np.empty((steps + 1, N, d))
        path[0] = x
        for k in range(steps):
            if prev_path is not None:
                x = x + kernel.mean_field(x, prev_path[k]) * dt
            x = x + inc[k]
            path[k + 1] = x
        flow = [EmpiricalMeasure(path[s]) for s in save]
        if flows:
            increments.append(max(hminus_distance(a, b, m, grid, window) for a, b in zip(flow, flows[-1])))
        flows.append(flow)
        prev_path = path
    floor = empirical_noise_floor(flows[-1], m, grid)
    res = PicardResult(increments, floor, flows, save, dt)
    if len(increments) >= 2 and not kernel.is_zero and not res.decreasing and not res.converged:
        raise SolverFailure(f"Picard increments do not decrease: {increments}")
    return res


# -- Gronwall stability ------------------------------------------------------------


def perturbed(nu: GridMeasure, other: GridMeasure, eps: float) -> GridMeasure:
    return nu.with_density((1 - eps) * nu.density + eps * other.density,
                           tail=(1 - eps) * nu.tail + eps * other.tail)


def gronwall_stability_check(nu0: GridMeasure, nu0p: GridMeasure, kernel: P.InteractionKernel,
                             cfg: MVSolverConfig, m: float, grid: FrequencyGrid) -> dict:
    """Growth of sup_t ||nu_t - nu'_t||_{-m} relative to the initial distance."""
    init = hminus_norm(difference(nu0, nu0p), m, grid)
    if init == 0:
        return {"initial": 0.0, "sup": 0.0, "factor": 0.0, "half_factor": 0.0, "exact_match": True}
    a, b = solve(nu0, kernel, cfg), solve(nu0p, kernel, cfg)
    dist = np.array([hminus_norm(difference(x, y), m, grid) for x, y in zip(a.snapshots, b.snapshots)])
    half = int(np.searchsorted(a.times, 0.5 * cfg.T + 1e-12))
    return {"initial": init, "sup": float(dist.max()), "factor": float(dist.max() / init),
            "half_factor": float(dist[:half].max() / init), "distances": dist.tolist(),
            "exact_match": False}


def perturbation_ladder(nu0: GridMeasure, other: GridMeasure, kernel: P.InteractionKernel, cfg: MVSolverConfig,
                        m: float, grid: FrequencyGrid, eps=(1e-2, 1e-3, 1e-4)) -> dict:
    """Output sup-distance against eps; slope 1 means linear response."""
    from .stats import loglog_fit

    rows = [gronwall_stability_check(nu0, perturbed(nu0, other, e), kernel, cfg, m, grid) for e in eps]
    sups = [r["sup"] for r in rows]
    fit = loglog_fit(eps, sups)
    factor = rows[0]["factor"]
    half = rows[0]["half_factor"]
    return {"eps": list(eps), "sup": sups, "factor": [r["factor"] for r in rows], "fit": fit,
            "doubling_ok": bool(factor <= 4 * half**2), "slope_ok": bool(abs(fit.slope - 1) <= 0.15)}
