"""Per-day lagged cross sums, the workhorse behind every two-point estimator."""

import numpy as np
from scipy import fft as sfft

_DIRECT_MAX_WORK = 200_000


def _segment_sums(x, y, max_lag, integer):
    n = len(x)
    k = min(max_lag, n - 1)
    out = np.zeros(max_lag + 1)
    if n * (k + 1) <= _DIRECT_MAX_WORK:
        for lag in range(k + 1):
            out[lag] = np.dot(x[: n - lag], y[lag:])
        return out
    size = sfft.next_fast_len(n + k + 1, real=True)
    fx = sfft.rfft(x, size)
    fy = sfft.rfft(y, size)
    full = sfft.irfft(np.conj(fx) * fy, size)[: k + 1]
    out[: k + 1] = np.rint(full) if integer else full
    return out


def lagged_sums(x, y, bounds, max_lag):
    """Return ``(sums, counts)`` with shape ``(n_days, max_lag + 1)``.

    ``sums[d, l]`` is the sum of ``x[t] * y[t + l]`` over pairs inside day
    ``d``; ``counts[d, l]`` is the number of such pairs. Integer-valued
    inputs (signs, indicators) give exact integer sums.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    integer = np.issubdtype(x.dtype, np.integer) and np.issubdtype(y.dtype, np.integer)
    xf = x.astype(float)
    yf = y.astype(float)
    n_days = len(bounds) - 1
    sums = np.zeros((n_days, max_lag + 1))
    counts = np.zeros((n_days, max_lag + 1))
    lags = np.arange(max_lag + 1)
    for d in range(n_days):
        a, b = int(bounds[d]), int(bounds[d + 1])
        sums[d] = _segment_sums(xf[a:b], yf[a:b], max_lag, integer)
        counts[d] = np.clip((b - a) - lags, 0, None)
    return sums, counts


def pooled_mean(sums, counts):
    """Pool the per-day sums: total sum over total pair count, per lag."""
    tot = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, sums.sum(axis=0) / np.where(tot > 0, tot, 1), np.nan)


def batch_means_stderr(per_day):
    """Standard error of the mean of per-day estimates (one batch per day).

    ``per_day`` has shape ``(n_days, ...)``; days with NaN entries are dropped
    lag by lag. Fewer than two usable days gives NaN.
    """
    per_day = np.asarray(per_day, dtype=float)
    ok = np.isfinite(per_day)
    n = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(ok, per_day, 0.0).sum(axis=0) / n
        dev = np.where(ok, per_day - mean, 0.0)
        var = (dev**2).sum(axis=0) / (n - 1)
        return np.where(n >= 2, np.sqrt(var / n), np.nan)
