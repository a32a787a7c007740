import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.stats import loglog_fit, mean_se, rms_se


def test_exact_power_law_three_points():
    fit = loglog_fit([1, 4, 16], [2.0, 1.0, 0.5])
    assert fit.slope == pytest.approx(-0.5, abs=1e-14)
    assert fit.intercept == pytest.approx(math.log(2.0), abs=1e-14)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.ci_low == pytest.approx(fit.slope) and fit.ci_high == pytest.approx(fit.slope)
    assert set(fit.as_dict()) == {"slope", "intercept", "ci_low", "ci_high", "r2", "stderr"}


def test_propagated_errors_widen_interval():
    x, y = [100, 400, 1600], [0.1, 0.05, 0.025]
    fit = loglog_fit(x, y, [0.01, 0.005, 0.0025])
    # relative errors 0.1 each; c_i = xc_i / sxx with sxx = 2 (log 4)^2
    c = np.array([-1, 0, 1]) * math.log(4) / (2 * math.log(4) ** 2)
    assert fit.stderr == pytest.approx(0.1 * np.sqrt(np.sum(c**2)), rel=1e-12)
    assert fit.ci_low < -0.5 < fit.ci_high


@given(st.floats(-3, 3), st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_recovers_any_line(slope, icpt):
    x = np.array([2.0, 8.0, 32.0, 128.0])
    fit = loglog_fit(x, np.exp(icpt) * x**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(icpt, abs=1e-8)


def test_mean_se_order_independent():
    x = np.random.default_rng(0).normal(size=1001) * 1e8
    assert mean_se(x) == mean_se(x[::-1])
    mu, se = mean_se([1.0, 2.0, 3.0])
    assert mu == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    assert math.isnan(mean_se([1.0])[1])


def test_rms_se():
    r, se = rms_se([3.0, -3.0, 3.0, -3.0])
    assert r == 3.0 and se == 0.0
