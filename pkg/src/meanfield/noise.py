"""The noise term

    w^n_t(h) = (1/n) sum_j int_0^t (grad S_{t-s} h)(x^j_s) . dB^j_s

computed by sewing or by left-point Ito sums, plus the self-normalised
studies: an Ornstein-Uhlenbeck toy model, the Graversen-Peskir ratio and
the 1/n decay of E sup_t |w^n_t(h)|^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import particles as P
from . import rng as rngmod
from . import roughpath as rp
from .semigroup import heat_gradient
from .sobolev import hs_norm
from .stats import loglog_fit, mean_se
from .testfunctions import TestFunction

METHODS = ("sewing", "ito-sum")


class MethodDisagreement(UserWarning):
    pass


def _dot(a, b):
    return np.einsum("...d,...d->...", a, b)


def ito_sum_path(path: np.ndarray, increments: np.ndarray, dt: float, h: TestFunction, ends) -> np.ndarray:
    """Left-point Ito sums for every end index in ``ends``, per particle: (len(ends), n)."""
    out = np.zeros((len(ends), path.shape[1]))
    for e_i, e in enumerate(ends):
        if e == 0:
            continue
        k = np.arange(e)
        tau = (dt * (e - k))[:, None]
        out[e_i] = _dot(heat_gradient(h, tau, path[k]), increments[:e]).sum(axis=0)
    return out


def sewing_path(germ: rp.Germ, ends) -> np.ndarray:
    return np.stack([rp.sewing_value(germ, int(e)) for e in ends])


def noise_term(traj: P.Trajectory, h: TestFunction, end: int, method: str = "sewing",
               lift: rp.RoughLift | None = None, kernel_sup: float = 1.0) -> float:
    """w^n_t(h) at grid index ``end`` from a trajectory kept with its full path."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if traj.path is None:
        raise ValueError("trajectory must keep its full path")
    if method == "ito-sum":
        return float(np.mean(ito_sum_path(traj.path, traj.increments, traj.dt, h, [end])[0]))
    if lift is None:
        lift = rp.ito_lift(traj.increments, traj.dt, seed=traj.seed)
    germ = rp.Germ(h, rp.ControlledPath(traj.path, lift, kernel_sup))
    return float(np.mean(rp.sewing_value(germ, end)))


def cross_validate(traj: P.Trajectory, h: TestFunction, end: int, lift: rp.RoughLift | None = None,
                   kernel_sup: float = 1.0, factor: float = 3.0) -> dict:
    """Sewing vs left-point Ito sums at one time, per particle path.

    Flagged when the RMS (over paths) difference exceeds ``factor`` times the
    Ito sum's own RMS mesh-halving difference.
    """
    if lift is None:
        lift = rp.ito_lift(traj.increments, traj.dt, seed=traj.seed)
    germ = rp.Germ(h, rp.ControlledPath(traj.path, lift, kernel_sup))
    sew = rp.sewing_value(germ, end)
    ito = rp.partition_sum(germ, end, end, first_order=True)
    ito_coarse = rp.partition_sum(germ, end, end // 2, first_order=True)
    diff = float(np.sqrt(np.mean((sew - ito) ** 2)))
    gap = float(np.sqrt(np.mean((ito - ito_coarse) ** 2)))
    return {"sewing_mean": float(np.mean(sew)), "ito_sum_mean": float(np.mean(ito)), "rms_difference": diff,
            "rms_self_gap": gap, "flagged": diff > factor * gap}


def pathwise_audit(traj: P.Trajectory, h: TestFunction, end: int, lift: rp.RoughLift | None = None,
                   kernel_sup: float = 1.0, max_triples: int = 200_000) -> dict:
    """|w^n_t(h)| against the average of the per-particle sewing bounds."""
    if lift is None:
        lift = rp.ito_lift(traj.increments, traj.dt, seed=traj.seed)
    germ = rp.Germ(h, rp.ControlledPath(traj.path, lift, kernel_sup))
    norms = rp.germ_holder_norms(germ, end=end, max_triples=max_triples)
    t = traj.dt * end
    bounds = rp.pathwise_bound(norms, t, lift.alpha)
    w = float(np.mean(rp.sewing_value(germ, end)))
    return {"w": w, "bound": float(np.mean(bounds)), "holds": abs(w) <= float(np.mean(bounds)),
            "pair_norm_mean": float(np.mean(norms["pair_norm"])),
            "triple_norm_mean": float(np.mean(norms["triple_norm"]))}


# -- 1/n decay -----------------------------------------------------------------


@dataclass
class NoiseStudyConfig:
    ns: tuple = (64, 256, 1024, 4096)
    replicas: int = 50
    h: TestFunction = field(default_factory=lambda: TestFunction.bump(1.0, 0.5, 1.0))
    T: float = 1.0
    dt: float = 1.0 / 64
    m: float = 1.6
    alpha: float = 0.4
    seed: int = 20240607
    save_count: int = 64
    kernel: str = "tanh"
    initial: P.InitialLaw = field(default_factory=P.InitialLaw.gaussian)
    method: str = "ito-sum"

    def __post_init__(self):
        ns = tuple(int(n) for n in self.ns)
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n-ladder must be strictly increasing")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        self.ns = ns

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def save_steps(self) -> np.ndarray:
        steps = self.steps
        if steps % self.save_count:
            raise ValueError("save_count must divide the number of steps")
        return np.arange(0, steps + 1, steps // self.save_count)


def _replica_noise_paths(cfg: NoiseStudyConfig, replica: int, functions) -> dict:
    """sup-grid statistics per n for one replica; ladders share the replica's streams."""
    seed = rngmod.derive_seed(cfg.seed, replica)
    kernel = P.kernel_by_name(cfg.kernel)
    ends = cfg.save_steps
    nmax = cfg.ns[-1]
    inc_all = P.brownian_increments(seed, nmax, cfg.steps, cfg.dt)
    out = {}
    for n in cfg.ns:
        sim = P.SimConfig(cfg.T, cfg.dt, n, 1, tuple(ends * cfg.dt), cfg.initial, seed)
        traj = P.simulate_paths(sim, kernel, inc_all[:, :n], keep_path=True)
        if cfg.method == "ito-sum":
            w = [ito_sum_path(traj.path, traj.increments, cfg.dt, h, ends).mean(axis=1) for h in functions]
        else:
            lift = rp.ito_lift(traj.increments, cfg.dt, cfg.alpha, seed=seed)
            w = [sewing_path(rp.Germ(h, rp.ControlledPath(traj.path, lift, kernel.sup_bound)), ends).mean(axis=1)
                 for h in functions]
        out[n] = np.stack(w)  # (functions, save times)
    return out


def run_replicas(fn, replicas: int, threads: int = 1) -> list:
    """Results in replica order regardless of scheduling."""
    if threads <= 1:
        return [fn(r) for r in range(replicas)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicas)))


def noise_decay_study(cfg: NoiseStudyConfig, threads: int = 1) -> dict:
    """Slope of E[sup_grid |w^n_t(h)|^2] against n with per-n constants."""
    reps = run_replicas(lambda r: _replica_noise_paths(cfg, r, [cfg.h]), cfg.replicas, threads)
    hm2 = hs_norm(cfg.h, cfg.m) ** 2
    est, se, const, centre = [], [], [], []
    for n in cfg.ns:
        w = np.stack([rep[n][0] for rep in reps])  # (R, S)
        mu, s = mean_se(np.max(w**2, axis=1))
        est.append(mu)
        se.append(s)
        const.append(n * mu / hm2)
        mt = w[:, -1]
        m_mean, m_se = mean_se(mt)
        centre.append({"n": n, "mean_wT": m_mean, "se": m_se})
    fit = loglog_fit(cfg.ns, est, se)
    return {"n": list(cfg.ns), "estimate": est, "stderr": se, "constant": const, "fit": fit,
            "passed": bool(abs(fit.slope + 1.0) <= 0.25 and fit.slope <= -0.75), "h_norm_sq": hm2,
            "centering": centre, "save_times": len(cfg.save_steps)}


def dictionary(count: int = 10, seed: int = 7) -> list[TestFunction]:
    """Fixed dictionary of single bumps with varied centres and widths."""
    g = np.random.default_rng(seed)
    return [TestFunction.bump(1.0, float(c), float(s))
            for c, s in zip(g.uniform(-2, 2, count), np.exp(g.uniform(np.log(0.3), np.log(2.0), count)))]


def uniform_probe_study(cfg: NoiseStudyConfig, functions=None, threads: int = 1) -> dict:
    """Exploratory: E[sup_t max_h |w^n_t(h)| / ||h||_m] against n."""
    functions = functions or dictionary()
    norms = np.array([hs_norm(h, cfg.m) for h in functions])
    reps = run_replicas(lambda r: _replica_noise_paths(cfg, r, functions), cfg.replicas, threads)
    est, se = [], []
    for n in cfg.ns:
        vals = [np.max(np.abs(rep[n]) / norms[:, None]) for rep in reps]
        mu, s = mean_se(vals)
        est.append(mu)
        se.append(s)
    fit = loglog_fit(cfg.ns, est, se)
    return {"n": list(cfg.ns), "estimate": est, "stderr": se, "fit": fit, "exploratory": True}


# -- Ornstein-Uhlenbeck toy ---------------------------------------------------


def ou_paths(seed: int, n: int, a: float, T: float, steps: int) -> np.ndarray:
    """Exact OU transitions started at 0 for n independent copies: (steps + 1, n)."""
    dt = T / steps
    decay = np.exp(-a * dt)
    sd = np.sqrt((1 - np.exp(-2 * a * dt)) / (2 * a))
    z = rngmod.normals(seed, rngmod.AUX, 1, (steps, n))[0]
    x = np.zeros((steps + 1, n))
    for k in range(steps):
        x[k + 1] = decay * x[k] + sd * z[k]
    return x


def ou_toy_study(a: float = 1.0, ns=(64, 256, 1024), T: float = 1.0, replicas: int = 2000,
                 steps: int = 128, seed: int = 31, threads: int = 1) -> dict:
    """E sup_t |v_t|^2 with v = (1/n) sum_j X^j against log(1 + 2aT) / (2na).

    Replicas share one stream of copies across the ladder (first n columns).
    The single constant C is the mean of the per-n ratios; each estimate must
    lie below C times the bound within three standard errors.
    """
    nmax = max(ns)

    def one(r):
        x = ou_paths(rngmod.derive_seed(seed, r), nmax, a, T, steps)
        return [float(np.max(np.mean(x[:, :n], axis=1) ** 2)) for n in ns]

    vals = np.array(run_replicas(one, replicas, threads))  # (R, len(ns))
    est, se = zip(*(mean_se(vals[:, k]) for k in range(len(ns))))
    bound = [np.log(1 + 2 * a * T) / (2 * n * a) for n in ns]
    ratio = [e / b for e, b in zip(est, bound)]
    ratio_se = [s / b for s, b in zip(se, bound)]
    c_hat = float(np.mean(ratio))
    fit = loglog_fit(ns, est, se)
    under = [r <= c_hat + 3 * s for r, s in zip(ratio, ratio_se)]
    return {"n": list(ns), "estimate": list(est), "stderr": list(se), "bound": bound, "ratio": ratio,
            "C_hat": c_hat, "fit": fit, "under_bound": under,
            "passed": bool(abs(fit.slope + 1.0) <= 0.2 and all(under))}


def ou_terminal_variance(a: float, T: float, replicas: int = 10_000, steps: int = 64, seed: int = 5) -> dict:
    x = ou_paths(seed, replicas, a, T, steps)[-1]
    var = float(np.var(x, ddof=1))
    se = var * np.sqrt(2.0 / (replicas - 1))
    return {"variance": var, "se": se, "exact": (1 - np.exp(-2 * a * T)) / (2 * a)}


# -- Graversen-Peskir ratio -----------------------------------------------------


def brownian_martingale(seed: int, T: float, steps: int):
    dt = T / steps
    z = rngmod.normals(seed, rngmod.AUX, 1, (steps,))[0]
    M = np.concatenate([[0.0], np.cumsum(np.sqrt(dt) * z)])
    return M, dt * np.arange(steps + 1)


def ou_martingale(seed: int, T: float, steps: int, a: float = 1.0, n: int = 64):
    """M_t = sum_j sqrt(2a/n) int_0^t e^{as} dB^j_s, exact in law on the grid; <M>_t = e^{2at} - 1."""
    t = T * np.arange(steps + 1) / steps
    var = np.diff(np.exp(2 * a * t)) / (2 * a)  # variance of each e^{as} dB increment
    z = rngmod.normals(seed, rngmod.AUX, 1, (steps, n))[0]
    dM = np.sqrt(2 * a / n) * (np.sqrt(var)[:, None] * z).sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(dM)]), np.exp(2 * a * t) - 1.0


def zero_martingale(seed: int, T: float, steps: int):
    return np.zeros(steps + 1), T * np.arange(steps + 1) / steps


GENERATORS = {"brownian": brownian_martingale, "ou": ou_martingale, "zero": zero_martingale}


def gp_ratio_study(generator: str = "brownian", Ts=(1.0, 4.0, 16.0, 64.0), replicas: int = 400,
                   steps: int = 2048, seed: int = 17, threads: int = 1) -> dict:
    """E[sup_t M_t^2 / (1 + <M>_t)] over E[log(1 + log(1 + <M>_T))] along a T-ladder."""
    gen = GENERATORS[generator]
    num, num_se, den, ratio = [], [], [], []
    for k, T in enumerate(Ts):
        def one(r, T=T, k=k):
            M, qv = gen(rngmod.derive_seed(seed, k, r), T, steps)
            return float(np.max(M**2 / (1 + qv))), float(np.log1p(np.log1p(qv[-1])))

        vals = np.array(run_replicas(one, replicas, threads))
        mu, s = mean_se(vals[:, 0])
        dn, _ = mean_se(vals[:, 1])
        num.append(mu)
        num_se.append(s)
        den.append(dn)
        ratio.append(mu / dn if dn > 0 else 0.0)
    out = {"T": list(Ts), "numerator": num, "numerator_se": num_se, "denominator": den, "ratio": ratio}
    if all(r > 0 for r in ratio):
        fit = loglog_fit(Ts, ratio)
        out["fit"] = fit
        out["passed"] = bool(fit.slope <= 0.1 and all(0.1 <= r <= 10 for r in ratio))
    else:
        out["passed"] = all(v == 0 for v in num)
    return out


def ou_martingale_constant(a: float = 1.0, T: float = 1.0, n: int = 64, replicas: int = 2000,
                           steps: int = 1024, seed: int = 23) -> dict:
    """C' = E sup_t e^{-2at} M_t^2 / log(1 + 2aT) for the OU-derived martingale."""
    t = T * np.arange(steps + 1) / steps
    vals = []
    for r in range(replicas):
        M, _ = ou_martingale(rngmod.derive_seed(seed, r), T, steps, a, n)
        vals.append(float(np.max(np.exp(-2 * a * t) * M**2)))
    mu, se = mean_se(vals)
    return {"estimate": mu, "stderr": se, "C_prime": mu / np.log1p(2 * a * T)}
