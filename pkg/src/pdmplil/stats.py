"""Small statistical helpers shared by the diagnostics."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from .errors import InsufficientSamples


def mean_se(x, axis=None):
    """Sample mean and its standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size if axis is None else x.shape[axis]
    if n < 2:
        raise InsufficientSamples("need at least two samples for a standard error")
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / math.sqrt(n)


def batch_means(x, n_batches):
    """Asymptotic variance of ``sum(x)/sqrt(n)`` by non-overlapping batch means.

    ``x`` is ``(n,)`` for one chain or ``(n, R)`` for R independent chains;
    the batches of all chains are pooled around the grand mean. Returns
    ``(sigma2, se)`` where ``se`` is the chi-square standard error.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    size = n // n_batches
    if n_batches < 2 or size < 1:
        raise InsufficientSamples(f"cannot form {n_batches} batches from {n} samples")
    b = x[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1).ravel()
    dof = b.size - 1
    sigma2 = size * float(np.sum((b - b.mean()) ** 2)) / dof
    return sigma2, sigma2 * math.sqrt(2.0 / dof)


def sqrt_with_se(var, var_se):
    """``sqrt`` of a variance estimate with a delta-method standard error."""
    var = max(float(var), 0.0)
    s = math.sqrt(var)
    return s, (var_se / (2.0 * s) if s > 0 else math.sqrt(max(var_se, 0.0)))


def loglinear_fit(n, values, floor=0.0):
    """Fit ``log v_n = a + n log q`` on the leading run of values above ``floor``.

    Returns a dict with the rate ``q``, ``r2``, ``intercept`` and the index
    window used. Fewer than three usable points gives ``q = nan``.
    """
    n = np.asarray(n, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > floor
    stop = len(v) if ok.all() else int(np.argmin(ok))
    out = {"q": math.nan, "r2": math.nan, "intercept": math.nan,
           "window": [float(n[0]) if len(n) else 0.0, float(n[stop - 1]) if stop else 0.0],
           "points": int(stop)}
    if stop < 3:
        return out
    res = sps.linregress(n[:stop], np.log(v[:stop]))
    out.update(q=float(math.exp(res.slope)), r2=float(res.rvalue ** 2),
               intercept=float(res.intercept))
    return out


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic and p-value."""
    res = sps.ks_2samp(np.ravel(a), np.ravel(b))
    return float(res.statistic), float(res.pvalue)
