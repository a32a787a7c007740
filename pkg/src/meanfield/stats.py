"""Small statistics helpers: replicate means and log-log slope fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    r2: float
    stderr: float

    def as_dict(self) -> dict:
        return asdict(self)


def mean_se(samples) -> tuple[float, float]:
    """Mean and standard error; math.fsum keeps the result order-independent."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    mean = math.fsum(x.tolist()) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def rms_se(samples) -> tuple[float, float]:
    """Root mean square with a delta-method standard error."""
    x = np.asarray(samples, dtype=float).ravel()
    m2, se2 = mean_se(x * x)
    r = math.sqrt(m2)
    return r, (se2 / (2 * r) if r > 0 else float("nan"))


def loglog_fit(x, y, yerr=None, z: float = 1.96) -> SlopeFit:
    """OLS of log y on log x.

    With ``yerr`` (standard errors of the y means) the CI propagates them
    through the linear estimator, var(slope) = sum c_i^2 (yerr_i / y_i)^2;
    otherwise the residual-based standard error is used.
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    n = lx.size
    xc = lx - lx.mean()
    sxx = float(np.dot(xc, xc))
    slope = float(np.dot(xc, ly - ly.mean()) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    sst = float(np.dot(ly - ly.mean(), ly - ly.mean()))
    r2 = 1.0 - float(np.dot(resid, resid)) / sst if sst > 0 else 1.0
    if yerr is not None:
        rel = np.asarray(yerr, dtype=float) / np.asarray(y, dtype=float)
        c = xc / sxx
        se = float(np.sqrt(np.sum(c * c * rel * rel)))
    elif n > 2:
        se = float(np.sqrt(np.dot(resid, resid) / (n - 2) / sxx))
    else:
        se = 0.0
    return SlopeFit(slope, intercept, slope - z * se, slope + z * se, r2, se)
