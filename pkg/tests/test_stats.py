import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmplil import errors
from pdmplil.stats import batch_means, ks_two_sample, loglinear_fit, mean_se, sqrt_with_se


def test_mean_se(rng):
    x = rng.normal(3.0, 2.0, 40_000)
    m, se = mean_se(x)
    assert se == pytest.approx(2.0 / 200.0, rel=0.02)
    assert abs(m - 3.0) < 4 * se
    with pytest.raises(errors.InsufficientSamples):
        mean_se([1.0])


def test_batch_means_ar1(rng):
    """AR(1) with coefficient phi has long-run variance s^2 / (1 - phi)^2."""
    phi, n, chains = 0.6, 40_000, 8
    e = rng.normal(size=(n, chains))
    x = np.empty_like(e)
    x[0] = e[0] / math.sqrt(1 - phi ** 2)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    var, se = batch_means(x, 40)
    assert abs(var - 1.0 / (1 - phi) ** 2) < 3 * se


def test_batch_means_too_few():
    with pytest.raises(errors.InsufficientSamples):
        batch_means(np.ones(5), 10)


@given(st.floats(0.05, 0.95), st.floats(0.1, 100), st.integers(5, 60))
def test_loglinear_exact_geometric(q, c, n):
    k = np.arange(n)
    fit = loglinear_fit(k, c * q ** k)
    assert fit["q"] == pytest.approx(q, rel=1e-9)
    assert fit["r2"] == pytest.approx(1.0, abs=1e-9) or q == pytest.approx(1.0)
    assert fit["points"] == n


def test_loglinear_stops_at_floor():
    v = np.r_[0.5 ** np.arange(10), np.zeros(5), 1.0]
    fit = loglinear_fit(np.arange(16), v, floor=1e-12)
    assert fit["points"] == 10 and fit["q"] == pytest.approx(0.5)
    assert math.isnan(loglinear_fit([0, 1], [1.0, 0.5])["q"])


def test_sqrt_with_se():
    s, se = sqrt_with_se(4.0, 0.4)
    assert s == 2.0 and se == pytest.approx(0.1)


def test_ks(rng):
    a, b = rng.normal(size=2000), rng.normal(size=2000)
    assert ks_two_sample(a, b)[1] > 0.001
    assert ks_two_sample(a, b + 0.5)[1] < 1e-6
