"""Weakly interacting particle system

    dx^i = (1/n) sum_j Gamma(x^i, x^j) dt + dB^i,   i = 0..n-1,

advanced by Euler-Maruyama with caller-visible Brownian increments.  The
diagonal term j = i is kept in the sum.  Particle indices are 0-based.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import rng as rngmod

# -- interaction kernels ----------------------------------------------------

_DIRECT_BLOCK = 1 << 22  # entries per broadcast block in direct sums


def _direct_field(eval_fn, targets, atoms, weights):
    out = np.zeros(targets.shape)
    rows = max(1, _DIRECT_BLOCK // max(1, atoms.shape[0]))
    for lo in range(0, targets.shape[0], rows):
        x = targets[lo:lo + rows, None, :]
        out[lo:lo + rows] = np.einsum("j,ijd->id", weights, eval_fn(x, atoms[None, :, :]))
    return out


# Chebyshev panels for sum_j w_j tanh(y_j - x).  The summand is analytic in x
# in the strip |Im x| < pi/2, so on a width-4 panel 64 nodes reach roundoff.
_PANEL = 4.0
_NODES = 64
_CHEB = np.cos(np.pi * np.arange(_NODES) / (_NODES - 1))
_BARY = np.where(np.arange(_NODES) % 2 == 0, 1.0, -1.0)
_BARY[0] *= 0.5
_BARY[-1] *= 0.5


def _tanh_sum_direct(x, y, w):
    out = np.empty(x.shape[0])
    rows = max(1, _DIRECT_BLOCK // max(1, y.shape[0]))
    for lo in range(0, x.shape[0], rows):
        out[lo:lo + rows] = np.tanh(y[None, :] - x[lo:lo + rows, None]) @ w
    return out


def tanh_sum(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """F(x_i) = sum_j w_j tanh(y_j - x_i) for 1-d arrays x, y.

    Panels holding more than 2 * 64 targets are evaluated exactly at 64
    Chebyshev nodes and interpolated barycentrically; the rest is summed
    directly.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[0])
    if x.shape[0] * y.shape[0] <= 4 * _NODES * y.shape[0]:
        return _tanh_sum_direct(x, y, w)
    panel = np.floor(x / _PANEL).astype(np.int64)
    order = np.argsort(panel, kind="stable")
    uniq, starts, counts = np.unique(panel[order], return_index=True, return_counts=True)
    direct_idx = []
    for p, s, c in zip(uniq, starts, counts):
        idx = order[s:s + c]
        if c <= 2 * _NODES:
            direct_idx.append(idx)
            continue
        centre = (p + 0.5) * _PANEL
        nodes = centre + 0.5 * _PANEL * _CHEB
        fn = _tanh_sum_direct(nodes, y, w)
        diff = x[idx, None] - nodes[None, :]
        hit = diff == 0.0
        diff[hit] = 1.0
        q = _BARY / diff
        vals = (q @ fn) / q.sum(axis=1)
        r, k = np.nonzero(hit)
        vals[r] = fn[k]
        out[idx] = vals
    if direct_idx:
        idx = np.concatenate(direct_idx)
        out[idx] = _tanh_sum_direct(x[idx], y, w)
    return out


@dataclass(frozen=True)
class InteractionKernel:
    """Gamma(x, y) with declared bounds.

    ``eval`` broadcasts over leading axes: x (..., d), y (..., d) -> (..., d).
    ``profile``, when set, means Gamma(x, y) = profile(y - x); the PDE solver
    then convolves by FFT.  ``fast_field`` may replace the direct atom sum.
    """

    eval: Callable
    lip_bound: float
    sup_bound: float
    description: str
    profile: Callable | None = None
    fast_field: Callable | None = None
    is_zero: bool = False

    def __call__(self, x, y):
        return self.eval(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def mean_field(self, targets, atoms, weights=None) -> np.ndarray:
        """sum_j w_j Gamma(target_i, atom_j) for every target (default w_j = 1/n)."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if weights is None:
            weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
        if self.is_zero:
            return np.zeros(targets.shape)
        if self.fast_field is not None:
            return self.fast_field(targets, atoms, weights)
        return _direct_field(self.eval, targets, atoms, weights)


def zero_kernel(d: int = 1) -> InteractionKernel:
    return InteractionKernel(lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)), 0.0, 0.0,
                             "zero", profile=lambda z: np.zeros_like(z), is_zero=True)


def _tanh_field(targets, atoms, weights):
    out = np.empty(targets.shape)
    for k in range(targets.shape[1]):
        out[:, k] = tanh_sum(targets[:, k], atoms[:, k], weights)
    return out


def tanh_kernel(d: int = 1) -> InteractionKernel:
    """Gamma(x, y)_k = tanh(y_k - x_k): attractive, bounded by sqrt(d), 1-Lipschitz."""
    return InteractionKernel(lambda x, y: np.tanh(y - x), 1.0, float(np.sqrt(d)), "tanh(y-x)",
                             profile=np.tanh, fast_field=_tanh_field)


def y_only_kernel(g: Callable, lip: float, sup: float, description: str = "g(y)") -> InteractionKernel:
    """Gamma(x, y) = g(y); every particle feels the same drift."""
    return InteractionKernel(lambda x, y: np.broadcast_to(g(y), np.broadcast_shapes(x.shape, y.shape)),
                             lip, sup, description)


def x_only_kernel(g: Callable, lip: float, sup: float, description: str = "g(x)") -> InteractionKernel:
    """Gamma(x, y) = g(x); the convolution against a probability measure returns g."""

    def field(targets, atoms, weights):
        return g(targets) * np.sum(weights)

    return InteractionKernel(lambda x, y: np.broadcast_to(g(x), np.broadcast_shapes(x.shape, y.shape)),
                             lip, sup, description, fast_field=field)


def sine_y_kernel() -> InteractionKernel:
    return y_only_kernel(np.sin, 1.0, 1.0, "sin(y)")


KERNELS = {"zero": zero_kernel, "tanh": tanh_kernel}


def kernel_by_name(name: str, d: int = 1) -> InteractionKernel:
    try:
        return KERNELS[name](d)
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def probe_kernel_bounds(kernel: InteractionKernel, d: int, samples: int, rng: np.random.Generator,
                        scale: float = 5.0) -> dict:
    """Random probing of the declared sup and Lipschitz bounds."""
    x, y = rng.normal(0, scale, (samples, d)), rng.normal(0, scale, (samples, d))
    dx, dy = rng.normal(0, 0.5, (samples, d)), rng.normal(0, 0.5, (samples, d))
    v = kernel(x, y)
    w = kernel(x + dx, y + dy)
    sup = float(np.max(np.linalg.norm(v, axis=-1)))
    num = np.linalg.norm(v - w, axis=-1)
    den = np.linalg.norm(dx, axis=-1) + np.linalg.norm(dy, axis=-1)
    return {"max_norm": sup, "max_lip_ratio": float(np.max(num / den))}


# -- initial laws -----------------------------------------------------------


def two_cluster_quantiles(n: int, centre: float = 3.0, std: float = 0.5) -> np.ndarray:
    """Deterministic start: quantiles (i + 1/2)/n of (N(-c, s^2) + N(c, s^2))/2."""
    from scipy import optimize

    p = (np.arange(n) + 0.5) / n

    def cdf(x):
        return 0.5 * (special.ndtr((x + centre) / std) + special.ndtr((x - centre) / std))

    out = np.empty(n)
    lo, hi = -centre - 12 * std, centre + 12 * std
    for i, pi in enumerate(p):
        out[i] = optimize.brentq(lambda z: cdf(z) - pi, lo, hi, xtol=1e-14)
    return out[:, None]


@dataclass(frozen=True)
class InitialLaw:
    """Law of x_0.

    kinds: deterministic-list (``points``), iid-gaussian (mean, std),
    iid-cauchy (loc, scale), iid-two-cluster (centre, std), custom-sampler
    (``sampler(rng, d) -> R^d`` called once per particle).
    IID draws use one stream per particle so that ensembles nest in n.
    """

    kind: str
    params: dict = field(default_factory=dict)
    points: np.ndarray | None = None
    sampler: Callable | None = None

    KINDS = ("deterministic-list", "iid-gaussian", "iid-cauchy", "iid-two-cluster", "custom-sampler")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "deterministic-list" and self.points is None:
            raise ValueError("deterministic-list needs points")
        if self.kind == "custom-sampler" and self.sampler is None:
            raise ValueError("custom-sampler needs a sampler")

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0):
        return cls("iid-gaussian", {"mean": mean, "std": std})

    @classmethod
    def cauchy(cls, loc=0.0, scale=1.0):
        return cls("iid-cauchy", {"loc": loc, "scale": scale})

    @classmethod
    def deterministic(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls("deterministic-list", points=pts)

    @classmethod
    def point_mass(cls, n: int, d: int = 1, at: float = 0.0):
        return cls.deterministic(np.full((n, d), at))

    def sample(self, n: int, d: int, seed: int) -> np.ndarray:
        if self.kind == "deterministic-list":
            if self.points.shape != (n, d):
                raise ValueError(f"deterministic start has shape {self.points.shape}, expected {(n, d)}")
            return self.points.copy()
        out = np.empty((n, d))
        p = self.params
        for i in range(n):
            g = rngmod.stream(seed, rngmod.INITIAL, i)
            if self.kind == "iid-gaussian":
                out[i] = p.get("mean", 0.0) + p.get("std", 1.0) * g.standard_normal(d)
            elif self.kind == "iid-cauchy":
                out[i] = p.get("loc", 0.0) + p.get("scale", 1.0) * g.standard_cauchy(d)
            elif self.kind == "iid-two-cluster":
                sign = 1.0 if g.random() < 0.5 else -1.0
                out[i] = sign * p.get("centre", 3.0) + p.get("std", 0.5) * g.standard_normal(d)
            else:
                out[i] = self.sampler(g, d)
        return out


# -- ensemble and stepping --------------------------------------------------


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray  # (n, d), read-only
    t: float
    seed: int

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def particle_streams(self) -> tuple:
        return tuple(rngmod.stream_key(self.seed, rngmod.BROWNIAN, i) for i in range(self.n))


def mean_field_drift(ens: ParticleEnsemble, kernel: InteractionKernel, i: int) -> np.ndarray:
    """(1/n) sum_j Gamma(x^i, x^j) for one particle, by direct summation."""
    if not 0 <= i < ens.n:
        raise IndexError(f"particle index {i} outside 0..{ens.n - 1}")
    x = ens.positions
    return np.mean(kernel(x[i][None, :], x), axis=0)


def all_drifts(ens: ParticleEnsemble, kernel: InteractionKernel) -> np.ndarray:
    return kernel.mean_field(ens.positions, ens.positions)


def em_step(ens: ParticleEnsemble, kernel: InteractionKernel, dt: float, increments: np.ndarray,
            external: Callable | None = None) -> ParticleEnsemble:
    """x^i + drift_i dt + increment_i, with an optional additive drift F(x)."""
    inc = np.asarray(increments, dtype=float).reshape(ens.n, ens.d)
    drift = all_drifts(ens, kernel)
    if external is not None:
        drift = drift + external(ens.positions)
    new = ens.positions + drift * dt + inc
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(f"particle {i} left the finite range at t={ens.t + dt}")
    return ParticleEnsemble(new, ens.t + dt, ens.seed)


# -- configuration and simulation ------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    T: float
    dt: float
    n: int
    d: int = 1
    save_times: tuple = ()
    initial: InitialLaw = field(default_factory=InitialLaw.gaussian)
    seed: int = 0
    external_drift: Callable | None = None

    def __post_init__(self):
        if not (0 < self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if self.n < 1 or self.d < 1:
            raise ValueError("need n >= 1 and d >= 1")
        st = tuple(float(s) for s in self.save_times) or (0.0, float(self.T))
        if any(b < a for a, b in zip(st, st[1:])):
            raise ValueError("save_times must be sorted")
        if st[0] < 0 or st[-1] > self.T + 1e-12:
            raise ValueError("save_times must lie in [0, T]")
        for s in st:
            k = s / self.dt
            if abs(k - round(k)) * self.dt > 1e-12:
                raise ValueError(f"save time {s} is not on the dt grid")
        k = self.T / self.dt
        if abs(k - round(k)) * self.dt > 1e-12:
            raise ValueError("dt must divide T")
        object.__setattr__(self, "save_times", st)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def save_steps(self) -> np.ndarray:
        return np.rint(np.asarray(self.save_times) / self.dt).astype(int)

    def with_(self, **kw) -> SimConfig:
        from dataclasses import replace

        return replace(self, **kw)


def equispaced_save_times(T: float, count: int) -> tuple:
    return tuple(T * np.arange(count + 1) / count)


def brownian_increments(seed: int, n: int, steps: int, dt: float, d: int = 1, start: int = 0) -> np.ndarray:
    """Increments (steps, n, d); particle i reads its own Philox stream."""
    z = rngmod.normals(seed, rngmod.BROWNIAN, n, (steps, d), start=start)
    return np.sqrt(dt) * np.transpose(z, (1, 0, 2))


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` steps (same path, coarser grid)."""
    s = increments.shape[0]
    if s % factor:
        raise ValueError("factor must divide the number of steps")
    return increments.reshape(s // factor, factor, *increments.shape[1:]).sum(axis=1)


@dataclass
class Trajectory:
    times: np.ndarray  # (S,)
    positions: np.ndarray  # (S, n, d) at save times
    increments: np.ndarray  # (steps, n, d)
    initial: np.ndarray  # (n, d)
    dt: float
    seed: int
    path: np.ndarray | None = None  # (steps + 1, n, d) when kept

    @property
    def n(self) -> int:
        return self.initial.shape[0]

    @property
    def d(self) -> int:
        return self.initial.shape[1]


def replay(initial: np.ndarray, kernel: InteractionKernel, dt: float, increments: np.ndarray,
           external: Callable | None = None, seed: int = 0) -> np.ndarray:
    """Positions at every grid time (steps + 1, n, d) from a stored increment record."""
    ens = ParticleEnsemble(initial, 0.0, seed)
    out = np.empty((increments.shape[0] + 1, *ens.positions.shape))
    out[0] = ens.positions
    for k in range(increments.shape[0]):
        ens = em_step(ens, kernel, dt, increments[k], external)
        out[k + 1] = ens.positions
    return out


def simulate_paths(cfg: SimConfig, kernel: InteractionKernel, increments: np.ndarray | None = None,
                   keep_path: bool = False) -> Trajectory:
    """Euler-Maruyama run; deterministic in cfg.seed unless increments are supplied."""
    if increments is None:
        increments = brownian_increments(cfg.seed, cfg.n, cfg.steps, cfg.dt, cfg.d)
    if increments.shape != (cfg.steps, cfg.n, cfg.d):
        raise ValueError(f"increment record has shape {increments.shape}, expected {(cfg.steps, cfg.n, cfg.d)}")
    x0 = cfg.initial.sample(cfg.n, cfg.d, cfg.seed)
    path = replay(x0, kernel, cfg.dt, increments, cfg.external_drift, cfg.seed)
    steps = cfg.save_steps
    return Trajectory(steps * cfg.dt, path[steps].copy(), increments, x0, cfg.dt, cfg.seed,
                      path if keep_path else None)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns time, particle, x0..x{d-1}; rows sorted by (time, particle)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "particle"] + [f"x{k}" for k in range(traj.d)])
        for s, t in enumerate(traj.times):
            for i in range(traj.n):
                w.writerow([repr(float(t)), i] + [repr(float(v)) for v in traj.positions[s, i]])


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(data[:, 0])
    n = int(data[:, 1].max()) + 1
    return times, data[:, 2:].reshape(times.size, n, -1)


def save_increments(traj: Trajectory, path) -> None:
    np.save(path, traj.increments)


def load_increments(path) -> np.ndarray:
    return np.load(path)


def step_size_differences(cfg: SimConfig, kernel: InteractionKernel, levels: int = 4) -> dict:
    """Terminal-position differences under dt halving on one noise realization.

    The finest level draws the increments; coarser levels sum them.  Returns
    RMS-over-particles differences between successive levels and their ratios.
    """
    fine_factor = 2 ** (levels - 1)
    fine_dt = cfg.dt / fine_factor
    fine = brownian_increments(cfg.seed, cfg.n, cfg.steps * fine_factor, fine_dt, cfg.d)
    x0 = cfg.initial.sample(cfg.n, cfg.d, cfg.seed)
    terminal = []
    for lvl in range(levels):
        f = 2 ** (levels - 1 - lvl)
        inc = coarsen(fine, f)
        ens = ParticleEnsemble(x0, 0.0, cfg.seed)
        for k in range(inc.shape[0]):
            ens = em_step(ens, kernel, fine_dt * f, inc[k], cfg.external_drift)
        terminal.append(ens.positions)
    diffs = [float(np.sqrt(np.mean((terminal[k + 1] - terminal[k]) ** 2))) for k in range(levels - 1)]
    ratios = [diffs[k] / diffs[k + 1] for k in range(len(diffs) - 1)]
    return {"differences": diffs, "ratios": ratios}
