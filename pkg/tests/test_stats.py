import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochcancel.stats import decay_fit, linear_fit, scaling_fit, tail_profile


def test_linear_fit_exact_line():
    fit = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert fit.slope == pytest.approx(2) and fit.intercept == pytest.approx(1)
    assert fit.r2 == pytest.approx(1) and fit.stderr == pytest.approx(0, abs=1e-12)


def test_linear_fit_stderr_matches_numpy(rng):
    x = np.linspace(0, 1, 30)
    y = 0.3 * x + rng.normal(scale=0.1, size=30)
    fit = linear_fit(x, y)
    coef, cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - np.polyval(coef, x)
    s2 = resid @ resid / (len(x) - 2)
    assert fit.slope == pytest.approx(coef[0]) and fit.intercept == pytest.approx(coef[1])
    assert fit.stderr == pytest.approx(math.sqrt(s2 * cov[0, 0]))
    assert fit.intercept_stderr == pytest.approx(math.sqrt(s2 * cov[1, 1]))


def test_fit_input_errors():
    with pytest.raises(ValueError):
        linear_fit([1], [2])
    with pytest.raises(ValueError):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 0), (3, 3)])
    with pytest.raises(ValueError):
        decay_fit([1, 2, 3], [1, -1, 1])


@given(st.floats(-3, 3), st.floats(0.01, 10))
def test_scaling_fit_recovers_exponent(p, a):
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    fit = scaling_fit(np.column_stack([xs, a * xs**p]))
    assert fit.slope == pytest.approx(p, abs=1e-9)
    assert math.exp(fit.intercept) == pytest.approx(a, rel=1e-9)


def test_decay_fit_rate():
    xs = np.arange(1, 7)
    fit = decay_fit(xs, 3.0 * np.exp(-0.7 * xs))
    assert -fit.slope == pytest.approx(0.7)


def test_tail_profile_on_gaussian():
    # P[|X| >= a] ~ exp(-a^2 / 2) for unit Gaussians, so c_hat near 1/2
    x = np.random.default_rng(1).normal(size=200_000)
    prof = tail_profile(x, 1.0, np.linspace(0.5, 4.0, 30))
    assert prof.c_hat == pytest.approx(0.5, rel=0.2)
    assert np.all(np.diff(prof.exceedance) <= 0)
    assert prof.n == 200_000 and prof.fit.r2 > 0.95


def test_tail_profile_errors():
    with pytest.raises(ValueError):
        tail_profile(np.zeros(10), 1.0, [1.0])
    with pytest.raises(ValueError):
        tail_profile(np.ones(2000), 1.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        tail_profile(np.arange(2000.0), 0.0, [1.0])
