"""Heat semigroup generated by Delta/2 (kernel variance t) on Gaussian mixtures,
its gradient, and the resolvent multiplier of Delta/2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .sobolev import FrequencyGrid, TruncationWarning, hs_norm
from .stats import loglog_fit
from .testfunctions import TestFunction


def apply_heat(h: TestFunction, t: float) -> TestFunction:
    """S_t h in closed form: each bump keeps its centre and widens to sqrt(sigma^2 + t)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return h
    s2 = h.widths**2
    new = s2 + t
    return TestFunction(h.amplitudes * (s2 / new) ** (h.d / 2), h.centers, np.sqrt(new))


def _heat_bumps(h: TestFunction, tau, x):
    """Shared pieces for evaluating S_tau h at x with per-point tau."""
    x = np.asarray(x, dtype=float)
    if h.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    tau = np.asarray(tau, dtype=float)[..., None]  # (..., 1)
    s2 = h.widths**2 + tau  # (..., K)
    amp = h.amplitudes * (h.widths**2 / s2) ** (h.d / 2)
    r = x[..., None, :] - h.centers  # (..., K, d)
    e = amp * np.exp(-0.5 * np.sum(r * r, axis=-1) / s2)
    return r, s2, e


def heat_value(h: TestFunction, tau, x):
    _, _, e = _heat_bumps(h, tau, x)
    return e.sum(axis=-1)


def heat_gradient(h: TestFunction, tau, x):
    """(grad S_tau h)(x), with tau broadcast against the batch shape of x."""
    r, s2, e = _heat_bumps(h, tau, x)
    return -np.einsum("...k,...kd->...d", e / s2, r)


def heat_hessian(h: TestFunction, tau, x):
    r, s2, e = _heat_bumps(h, tau, x)
    outer = np.einsum("...k,...ki,...kj->...ij", e / s2**2, r, r)
    return outer - np.einsum("...k->...", e / s2)[..., None, None] * np.eye(h.d)


@dataclass(frozen=True)
class GradientField:
    """x -> grad S_t h (x), with its Jacobian D grad S_t h."""

    h: TestFunction
    t: float

    def __call__(self, x):
        return heat_gradient(self.h, self.t, x)

    def jacobian(self, x):
        return heat_hessian(self.h, self.t, x)


def grad_heat(h: TestFunction, t: float) -> GradientField:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return GradientField(h, float(t))


# -- gradient identity bounds ----------------------------------------------


def _refined_sup(fun, xs, values, top=4):
    """Dense-grid sup refined by bounded 1-d maximisation around the best cells."""
    best = float(np.max(values))
    step = xs[1] - xs[0]
    for i in np.argsort(values)[-top:]:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
        if hi - lo < step:
            continue
        res = optimize.minimize_scalar(lambda z: -fun(z), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return best


def derivative_sups(h: TestFunction, xs: np.ndarray) -> tuple[float, float]:
    """(||D^2 h||_inf, ||D^3 h||_inf); Frobenius tensor norms in d > 1."""
    if h.d == 1:
        f2 = lambda z: abs(float(h.hessian(np.array([z]))[0, 0]))  # noqa: E731
        f3 = lambda z: abs(float(h.third(np.array([z]))[0, 0, 0]))  # noqa: E731
        v2 = np.abs(h.hessian(xs[:, None])[:, 0, 0])
        v3 = np.abs(h.third(xs[:, None])[:, 0, 0, 0])
        return _refined_sup(f2, xs, v2), _refined_sup(f3, xs, v3)
    v2 = np.sqrt(np.sum(h.hessian(xs) ** 2, axis=(-1, -2)))
    v3 = np.sqrt(np.sum(h.third(xs) ** 2, axis=(-1, -2, -3)))
    return float(v2.max()), float(v3.max())


@dataclass
class BoundReport:
    rows: list
    worst_sqrt_ratio: float
    worst_linear_ratio: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


class SemigroupBoundViolation(AssertionError):
    pass


def sampling_grid(h: TestFunction, points: int = 20001, nsig: float = 8.0) -> np.ndarray:
    lo, hi = h.support_window(nsig)
    if h.d == 1:
        return np.linspace(lo, hi, points)
    side = int(round(points ** (1.0 / h.d)))
    ax = np.linspace(lo, hi, side)
    mesh = np.meshgrid(*([ax] * h.d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def check_gradient_identity_bounds(h: TestFunction, times, xs=None, name: str = "h", raise_on_violation=False):
    """Check ||grad(S_t - Id)h||_inf <= sqrt(d t)||D^2 h|| and <= (d t / 2)||D^3 h||.

    In d = 1 these are exactly sqrt(t)||h''|| and (t/2)||h'''||.  The left side
    is sampled on a dense grid; the right-hand sups are refined locally so that
    they are not underestimated.
    """
    if xs is None:
        xs = sampling_grid(h)
    pts = xs[:, None] if h.d == 1 else xs
    d2, d3 = derivative_sups(h, xs)
    g0 = h.gradient(pts)
    rows, violations = [], []
    worst_a = worst_b = 0.0
    for t in times:
        diff = heat_gradient(h, t, pts) - g0
        mag = np.sqrt(np.sum(diff * diff, axis=-1))
        i = int(np.argmax(mag))
        lhs = float(mag[i])
        b1 = np.sqrt(h.d * t) * d2
        b2 = 0.5 * h.d * t * d3
        r1 = lhs / b1 if b1 > 0 else 0.0
        r2 = lhs / b2 if b2 > 0 else 0.0
        worst_a, worst_b = max(worst_a, r1), max(worst_b, r2)
        rows.append({"function": name, "t": t, "lhs": lhs, "sqrt_bound": b1, "linear_bound": b2,
                     "sqrt_ratio": r1, "linear_ratio": r2})
        slack = 1e-12 * max(1.0, float(np.max(np.abs(g0))))
        for label, bound in (("sqrt", b1), ("linear", b2)):
            if lhs > bound + slack:
                violations.append({"function": name, "bound": label, "t": t, "x": pts[i].tolist(),
                                   "lhs": lhs, "rhs": bound})
    if violations and raise_on_violation:
        v = violations[0]
        raise SemigroupBoundViolation(f"{v['bound']} bound violated for {name} at t={v['t']}, x*={v['x']}")
    return BoundReport(rows, worst_a, worst_b, violations)


# -- smoothing -------------------------------------------------------------


def gradient_heat_norm(h: TestFunction, t: float, m: float, grid: FrequencyGrid | None = None) -> float:
    """||grad S_t h||_m from the multiplier |xi| exp(-t|xi|^2/2)."""
    grid = grid or FrequencyGrid.for_function(h)
    xi = grid.points
    k2 = np.sum(xi * xi, axis=-1)
    integrand = (1 + k2) ** m * k2 * np.exp(-t * k2) * np.abs(h.fourier(xi)) ** 2
    return float(np.sqrt(np.dot(grid.weights, integrand)))


def smoothing_study(functions, times, m: float) -> dict:
    """Empirical sup_h ||grad S_t h||_m / ||h||_m against t and its log-log exponent.

    Also reports the exact operator norm of grad S_t on H^m,
    sup_xi |xi| exp(-t|xi|^2/2) = (e t)^{-1/2}.
    """
    sups = []
    for t in times:
        best = 0.0
        for h in functions:
            grid = FrequencyGrid.for_function(h)
            best = max(best, gradient_heat_norm(h, t, m, grid) / hs_norm(h, m, grid))
        sups.append(best)
    fit = loglog_fit(np.asarray(times), np.asarray(sups))
    return {"times": list(times), "sup_ratio": sups, "exponent": fit.slope, "fit": fit,
            "operator_norm": [float((np.e * t) ** -0.5) for t in times]}


def narrow_bump_family(count: int = 20, smallest: float = 0.01, largest: float = 1.0, d: int = 1):
    """L^2-normalised bumps of log-spaced widths (resolve the t^{-1/2} smoothing rate)."""
    out = []
    for s in np.exp(np.linspace(np.log(smallest), np.log(largest), count)):
        b = TestFunction.bump(1.0, 0.0, s, d)
        out.append(b.scaled(1.0 / b.l2_norm()))
    return out


# -- resolvent -------------------------------------------------------------


@dataclass(frozen=True)
class ResolventPoint:
    rho: float
    eta: float
    eps: float = 0.1

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not (np.pi / 2 < self.eta < np.pi):
            raise ValueError("eta must lie in (pi/2, pi)")
        if not (0 < self.eps < 0.5):
            raise ValueError("eps must lie in (0, 1/2)")

    @property
    def lam(self) -> complex:
        return self.rho * np.exp(1j * self.eta)


def resolvent_symbol(xi, lam: complex):
    """Fourier multiplier of R(lam, Delta/2): 1 / (lam + |xi|^2/2)."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    return 1.0 / (lam + 0.5 * np.sum(xi * xi, axis=-1))


def apply_resolvent_gradient(h: TestFunction, point: ResolventPoint, grid: FrequencyGrid, x) -> np.ndarray:
    """grad R(lam, Delta/2) h evaluated at spatial points x (complex, shape (..., d)).

    Inverse transform by quadrature over ``grid``.
    """
    xi = grid.points
    hat = h.fourier(xi)
    k2 = np.sum(xi * xi, axis=-1)
    mag = np.abs(hat) ** 2 * (1 + k2)
    shell = float(np.dot(grid.weights[grid.outer_shell()], mag[grid.outer_shell()]))
    if shell > 1e-6 * float(np.dot(grid.weights, mag)):
        import warnings

        warnings.warn("resolvent field: cutoff too small for h", TruncationWarning, stacklevel=2)
    mult = resolvent_symbol(xi, point.lam) * hat * grid.weights  # (Q,)
    x = np.asarray(x, dtype=float)
    if h.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    phase = np.exp(1j * x @ xi.T)  # (..., Q)
    return (2 * np.pi) ** (-h.d / 2) * np.einsum("...q,qd->...d", phase * mult, 1j * xi)


def resolvent_identity_residual(h: TestFunction, point: ResolventPoint, grid: FrequencyGrid) -> float:
    """max |(lam + |xi|^2/2) * symbol * h^ - h^| / max |h^| over the grid."""
    xi = grid.points
    hat = h.fourier(xi)
    k2 = np.sum(xi * xi, axis=-1)
    back = (point.lam + 0.5 * k2) * resolvent_symbol(xi, point.lam) * hat
    return float(np.max(np.abs(back - hat)) / np.max(np.abs(hat)))


def resolvent_gradient_norm_sq(h: TestFunction, point: ResolventPoint, s: float, grid: FrequencyGrid) -> float:
    """||grad R(lam, Delta/2) h||_s^2 on the grid."""
    xi = grid.points
    k2 = np.sum(xi * xi, axis=-1)
    integrand = (1 + k2) ** s * k2 * np.abs(resolvent_symbol(xi, point.lam)) ** 2 * np.abs(h.fourier(xi)) ** 2
    return float(np.dot(grid.weights, integrand))


def resolvent_gradient_norm_sq_quad(h: TestFunction, point: ResolventPoint, s: float) -> float:
    """Adaptive-quadrature version of the same integral (d = 1), independent of the grid."""
    if h.d != 1:
        raise ValueError("quadrature oracle is one-dimensional")

    def integrand(k):
        hat = complex(h.fourier(float(k)))
        return (1 + k * k) ** s * k * k * abs(1.0 / (point.lam + 0.5 * k * k)) ** 2 * abs(hat) ** 2

    cut = 60.0 / float(np.min(h.widths))
    val, _ = integrate.quad(integrand, -cut, cut, limit=400, epsabs=0, epsrel=1e-12, points=[0.0])
    return float(val)


def c_eta(eta: float) -> float:
    """(sup_{x >= 0} (1 + x) / |e^{i eta} + x|)^2."""
    z = np.exp(1j * eta)
    res = optimize.minimize_scalar(lambda x: -(1 + x) / abs(z + x), bounds=(0, 1e4), method="bounded",
                                   options={"xatol": 1e-12})
    grid = np.concatenate([np.linspace(0, 10, 20001), np.logspace(1, 6, 2001)])
    best = max(-res.fun, float(np.max((1 + grid) / np.abs(z + grid))))
    return float(best**2)


def resolvent_decay_study(h: TestFunction, eta: float, eps: float, rhos, m: float,
                          grid: FrequencyGrid | None = None) -> dict:
    """Fitted exponent of rho -> ||grad R(rho e^{i eta}) h||_{m - 2 eps}^2."""
    grid = grid or FrequencyGrid.for_function(h)
    hm2 = hs_norm(h, m, grid) ** 2
    ce = c_eta(eta)
    values, ratios = [], []
    for rho in rhos:
        v = resolvent_gradient_norm_sq(h, ResolventPoint(rho, eta, eps), m - 2 * eps, grid)
        values.append(v)
        ratios.append(v * rho ** (1 + 2 * eps) / (ce * hm2))
    fit = loglog_fit(np.asarray(rhos, dtype=float), np.asarray(values))
    bound = -(1 + 2 * eps) + 0.1
    return {"rho": list(rhos), "norm_sq": values, "ratio_to_bound": ratios, "slope": fit.slope,
            "fit": fit, "slope_bound": bound, "passed": bool(fit.slope <= bound), "c_eta": ce}
