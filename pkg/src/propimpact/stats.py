"""Empirical estimators: sign correlations, responses, signature plot.

Every estimator is a pooled sample mean over same-day pairs of events.
Conditional quantities are normalised by products of unconditional type
probabilities, never by joint probabilities, so the indicator identities

    C(l) = sum_{a,b} P(a) P(b) C_ab(l)
    S(l) = sum_a P(a) S_a(l)

hold on every sample up to floating-point rounding.

Array layout: conditional families are indexed ``[a, b, lag]`` with
``a``/``b`` in ``EventType`` order (0 = NC, 1 = C) and ``a`` the
chronologically earlier event. Lag 0 is included; the equal-time entries
follow from the same formulas (``C_ab(0) = delta_ab / P(a)``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._lagsum import batch_means_stderr, lagged_sums, pooled_mean
from .errors import DegenerateTypeError, LagError, ValidationError
from .events import EVENT_TYPES, EventSeries, EventType

TYPE_NAMES = tuple(t.name for t in EVENT_TYPES)


def pair_key(a, b):
    return f"{TYPE_NAMES[a]}_{TYPE_NAMES[b]}"


@dataclass(frozen=True)
class CorrelationSet:
    L: int
    C: np.ndarray
    probs: np.ndarray
    C_cond: np.ndarray | None = None
    Pi: np.ndarray | None = None
    C_se: np.ndarray | None = None
    n_events: int = 0

    def cc(self, a, b, k):
        """Conditional correlation at signed lag(s) ``k``.

        Negative lags use stationarity, ``C_ab(-k) = C_ba(k)``.
        """
        k = np.asarray(k)
        if self.C_cond is None:
            raise ValidationError("this correlation set has no conditional correlations")
        if np.max(np.abs(k), initial=0) > self.L:
            raise LagError(f"lag {int(np.max(np.abs(k)))} beyond measured horizon {self.L}")
        return np.where(k >= 0, self.C_cond[a, b, np.abs(k)], self.C_cond[b, a, np.abs(k)])

    def c(self, k):
        k = np.abs(np.asarray(k))
        if np.max(k, initial=0) > self.L:
            raise LagError(f"lag {int(np.max(k))} beyond measured horizon {self.L}")
        return self.C[k]

    def single_type(self) -> "CorrelationSet":
        """View the unconditional correlation as a one-type family."""
        return CorrelationSet(L=self.L, C=self.C, probs=np.array([1.0]),
                              C_cond=self.C[None, None, :].copy(),
                              Pi=np.zeros((1, 1, self.L + 1)), C_se=self.C_se,
                              n_events=self.n_events)


@dataclass(frozen=True)
class ResponseSet:
    L_pos: int
    L_neg: int
    R: np.ndarray
    S: np.ndarray
    R_cond: np.ndarray
    S_cond: np.ndarray
    sigma_trade: float
    probs: np.ndarray
    R_se: np.ndarray | None = None
    R_cond_se: np.ndarray | None = None
    S_pair: np.ndarray | None = None
    D: np.ndarray | None = None
    D_se: np.ndarray | None = None

    @property
    def lags(self):
        return np.arange(-self.L_neg, self.L_pos + 1)

    def idx(self, lag):
        lag = np.asarray(lag)
        if np.any(lag < -self.L_neg) or np.any(lag > self.L_pos):
            raise LagError(f"lag outside [-{self.L_neg}, {self.L_pos}]")
        return lag + self.L_neg

    def r_at(self, lag, event_type=None):
        if event_type is None:
            return self.R[self.idx(lag)]
        return self.R_cond[int(event_type), self.idx(lag)]

    def s_at(self, lag, event_type=None):
        if event_type is None:
            return self.S[self.idx(lag)]
        return self.S_cond[int(event_type), self.idx(lag)]

    def d_at(self, lag):
        return self.D[np.asarray(lag) - 1]


def _check_lag(series: EventSeries, L):
    if L < 0:
        raise ValidationError("lag count must be non-negative")
    longest = int(series.day_lengths.max())
    if L >= longest:
        raise LagError(f"lag {L} needs a day segment longer than the longest one ({longest})")


def _probs(series: EventSeries, min_count=1):
    n = len(series)
    n_c = int(np.count_nonzero(series.is_c))
    counts = np.array([n - n_c, n_c])
    for t in EVENT_TYPES:
        if counts[t] < min_count:
            raise DegenerateTypeError(t.name, int(counts[t]))
    return counts / n


def _indicators(series):
    c = series.is_c.astype(np.int64)
    return (1 - c, c)


def _per_day(sums, counts):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.where(counts > 0, counts, 1), np.nan)


def sign_autocorrelation(series: EventSeries, L: int, with_stderr=False):
    """C(l) = E[eps_t eps_{t+l}] for l = 0..L."""
    _check_lag(series, L)
    eps = series.sign.astype(np.int64)
    sums, counts = lagged_sums(eps, eps, series.bounds, L)
    C = pooled_mean(sums, counts)
    C[0] = 1.0
    if with_stderr:
        se = batch_means_stderr(_per_day(sums, counts))
        se[0] = 0.0
        return C, se
    return C


def conditional_sign_correlation(series: EventSeries, L: int, min_count=1):
    """C_ab(l) = E[eps_t I_a(t) eps_{t+l} I_b(t+l)] / (P(a) P(b)), shape (2, 2, L+1)."""
    _check_lag(series, L)
    P = _probs(series, min_count)
    eps = series.sign.astype(np.int64)
    ind = _indicators(series)
    x = [eps * ind[a] for a in EVENT_TYPES]
    out = np.empty((2, 2, L + 1))
    for a in EVENT_TYPES:
        for b in EVENT_TYPES:
            sums, counts = lagged_sums(x[a], x[b], series.bounds, L)
            out[a, b] = pooled_mean(sums, counts) / (P[a] * P[b])
    return out


def occurrence_correlation(series: EventSeries, L: int, min_count=1):
    """Pi_ab(l) = E[I_a(t-l) I_b(t)] / (P(a) P(b)) - 1, shape (2, 2, L+1)."""
    _check_lag(series, L)
    P = _probs(series, min_count)
    ind = _indicators(series)
    out = np.empty((2, 2, L + 1))
    for a in EVENT_TYPES:
        for b in EVENT_TYPES:
            sums, counts = lagged_sums(ind[a], ind[b], series.bounds, L)
            out[a, b] = pooled_mean(sums, counts) / (P[a] * P[b]) - 1.0
    return out


def correlations(series: EventSeries, L: int, conditional=True, min_count=1) -> CorrelationSet:
    C, se = sign_autocorrelation(series, L, with_stderr=True)
    if conditional:
        probs = _probs(series, min_count)
        C_cond = conditional_sign_correlation(series, L, min_count)
        Pi = occurrence_correlation(series, L, min_count)
    else:
        n_c = int(np.count_nonzero(series.is_c))
        probs = np.array([len(series) - n_c, n_c]) / len(series)
        C_cond = Pi = None
    return CorrelationSet(L=L, C=C, probs=probs, C_cond=C_cond, Pi=Pi, C_se=se,
                          n_events=len(series))


def _cumulate(S_neg, S_pos):
    """Response from its differential form.

    ``S_neg[i-1] = S(-i)`` and ``S_pos[i] = S(i)``. Returns the response over
    lags ``-L_neg..L_pos`` with R(0) = 0, R(l>0) = sum_{0<=i<l} S(i) and
    R(-l) = -sum_{0<i<=l} S(-i).
    """
    neg = -np.cumsum(S_neg, axis=-1)[..., ::-1]
    zero = np.zeros(S_pos.shape[:-1] + (1,))
    pos = np.cumsum(S_pos[..., :-1], axis=-1)
    return np.concatenate([neg, zero, pos], axis=-1)


def response(series: EventSeries, L_pos: int, L_neg: int, pair=True, signature=True,
             min_count=1) -> ResponseSet:
    """Differential and cumulative responses for lags -L_neg..L_pos.

    S(l) = E[r_{t+l} eps_t]; S_a(l) = E[r_{t+l} eps_t I_a(t)] / P(a).
    With ``pair``/``signature`` the pair-response matrix and the signature
    plot are filled in as well. Conditional fields are NaN when a type never
    occurs.
    """
    _check_lag(series, max(L_pos, L_neg))
    n_c = int(np.count_nonzero(series.is_c))
    P = np.array([len(series) - n_c, n_c]) / len(series)
    both = min(len(series) - n_c, n_c) >= max(min_count, 1)
    eps = series.sign.astype(float)
    r = series.returns
    ind = [i.astype(float) for i in _indicators(series)]
    bounds = series.bounds

    def diff_resp(x):
        sp, cp = lagged_sums(x, r, bounds, L_pos)
        sn, cn = lagged_sums(r, x, bounds, L_neg)
        s_pos = pooled_mean(sp, cp)
        s_neg = pooled_mean(sn[:, 1:], cn[:, 1:])
        day = _cumulate(_per_day(sn[:, 1:], cn[:, 1:]), _per_day(sp, cp))
        return s_neg, s_pos, day

    s_neg, s_pos, day = diff_resp(eps)
    S = np.concatenate([s_neg[::-1], s_pos])
    R = _cumulate(s_neg, s_pos)
    R_se = batch_means_stderr(day)
    S_cond = np.full((2, L_neg + L_pos + 1), np.nan)
    R_cond = np.full_like(S_cond, np.nan)
    R_cond_se = np.full_like(S_cond, np.nan)
    if both:
        for a in EVENT_TYPES:
            cn, cp, cday = diff_resp(eps * ind[a])
            S_cond[a] = np.concatenate([cn[::-1], cp]) / P[a]
            R_cond[a] = _cumulate(cn, cp) / P[a]
            R_cond_se[a] = batch_means_stderr(cday / P[a])
    S_pair = pair_response(series, L_pos, min_count) if (pair and both) else None
    D = D_se = None
    if signature:
        D, D_se = signature_plot(series, L_pos, with_stderr=True)
    sigma = float(np.sqrt(np.mean(r * r)))
    return ResponseSet(L_pos=L_pos, L_neg=L_neg, R=R, S=S, R_cond=R_cond, S_cond=S_cond,
                       sigma_trade=sigma, probs=P, R_se=R_se, R_cond_se=R_cond_se,
                       S_pair=S_pair, D=D, D_se=D_se)


def pair_response(series: EventSeries, L: int, min_count=1):
    """S_ab(l) = E[I_a(t-l) eps_{t-l} I_b(t) r_t] / (P(a) P(b)), shape (2, 2, L+1)."""
    _check_lag(series, L)
    P = _probs(series, min_count)
    eps = series.sign.astype(float)
    r = series.returns
    ind = [i.astype(float) for i in _indicators(series)]
    out = np.empty((2, 2, L + 1))
    for a in EVENT_TYPES:
        for b in EVENT_TYPES:
            sums, counts = lagged_sums(eps * ind[a], ind[b] * r, series.bounds, L)
            out[a, b] = pooled_mean(sums, counts) / (P[a] * P[b])
    return out


def signature_plot(series: EventSeries, L: int, with_stderr=False):
    """D(l) = E[(m_{t+l} - m_t)^2] / l for l = 1..L (index l-1).

    Mids are rebuilt per day as the running sum of the row returns, so
    D(1) is exactly the mean squared return.
    """
    _check_lag(series, L)
    sums = np.zeros((series.n_days, L))
    counts = np.zeros((series.n_days, L))
    r = series.returns
    for d, sl in enumerate(series.days()):
        m = np.concatenate([[0.0], np.cumsum(r[sl])])
        n = len(m)
        for lag in range(1, min(L, n - 1) + 1):
            inc = m[lag:] - m[: n - lag]
            sums[d, lag - 1] = np.dot(inc, inc)
            counts[d, lag - 1] = n - lag
    lags = np.arange(1, L + 1)
    D = pooled_mean(sums, counts) / lags
    if with_stderr:
        return D, batch_means_stderr(_per_day(sums, counts) / lags)
    return D


def three_point_correlation(series: EventSeries, k: int, lag: int, min_count=1):
    """C_{a,b,c}(k, l) = E[x_a(t-k) x_b(t-l) I_c(t)] / (P(a) P(b) P(c)), shape (2, 2, 2).

    ``x_a(s) = I_a(s) eps_s``. Diagnostic only: it measures how far the
    two-point factorisation used by the history-dependent calibration is
    from the data.
    """
    if k == lag or k < 1 or lag < 1:
        raise ValidationError("three-point lags must be distinct and >= 1")
    span = max(k, lag)
    _check_lag(series, span)
    P = _probs(series, min_count)
    eps = series.sign.astype(float)
    ind = [i.astype(float) for i in _indicators(series)]
    x = [eps * ind[a] for a in EVENT_TYPES]
    tot = np.zeros((2, 2, 2))
    count = 0
    for sl in series.days():
        a0, b0 = sl.start, sl.stop
        n = b0 - a0
        if n <= span:
            continue
        t = np.arange(a0 + span, b0)
        count += len(t)
        for a in EVENT_TYPES:
            for b in EVENT_TYPES:
                prod = x[a][t - k] * x[b][t - lag]
                for c in EVENT_TYPES:
                    tot[a, b, c] += np.dot(prod, ind[c][t])
    return tot / count / (P[:, None, None] * P[None, :, None] * P[None, None, :])


def factorization_residual(series: EventSeries, corr: CorrelationSet, lags=(1, 2, 5, 10),
                           present=EventType.C):
    """Gap between measured three-point correlations and their factorised form.

    The calibration replaces C_{a,b,c}(n, l) by C_{a,b}(n - l). Returns the
    largest absolute gap over the lag grid and all past types, with the
    present type fixed, plus the individual entries.
    """
    entries = []
    for n in lags:
        for lag in lags:
            if n == lag:
                continue
            c3 = three_point_correlation(series, n, lag)
            for a in EVENT_TYPES:
                for b in EVENT_TYPES:
                    gap = c3[a, b, present] - float(corr.cc(a, b, n - lag))
                    entries.append({"n": n, "l": lag, "a": TYPE_NAMES[a],
                                    "b": TYPE_NAMES[b], "gap": gap})
    worst = max((abs(e["gap"]) for e in entries), default=0.0)
    return {"max_abs": worst, "entries": entries}


def deviation_ratio(resp: ResponseSet, model_R_neg, lags):
    """(R_emp(-l) - R_model(-l)) / sigma for each l in ``lags``."""
    if not resp.sigma_trade > 0:
        raise ValidationError("volatility per trade is zero")
    lags = np.asarray(lags)
    emp = resp.r_at(-lags)
    return (emp - np.asarray(model_R_neg, dtype=float)) / resp.sigma_trade


def _clean(a):
    if a is None:
        return None
    return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]


def to_dict(corr: CorrelationSet, resp: ResponseSet | None = None, instrument="") -> dict:
    out = {"instrument": instrument, "L": corr.L, "C": _clean(corr.C),
           "probs": {TYPE_NAMES[a]: float(corr.probs[a]) for a in range(len(corr.probs))}}
    if corr.C_cond is not None:
        out["C_cond"] = {pair_key(a, b): _clean(corr.C_cond[a, b])
                         for a in EVENT_TYPES for b in EVENT_TYPES}
        out["Pi"] = {pair_key(a, b): _clean(corr.Pi[a, b]) for a in EVENT_TYPES for b in EVENT_TYPES}
    if resp is not None:
        out.update({
            "L_pos": resp.L_pos, "L_neg": resp.L_neg, "lags": resp.lags.tolist(),
            "R": _clean(resp.R), "S": _clean(resp.S),
            "R_cond": {TYPE_NAMES[a]: _clean(resp.R_cond[a]) for a in EVENT_TYPES},
            "S_cond": {TYPE_NAMES[a]: _clean(resp.S_cond[a]) for a in EVENT_TYPES},
            "D": _clean(resp.D), "sigma_trade": resp.sigma_trade,
        })
        if resp.S_pair is not None:
            out["S_pair"] = {pair_key(a, b): _clean(resp.S_pair[a, b])
                             for a in EVENT_TYPES for b in EVENT_TYPES}
    return out


def _arr(v):
    return np.array([np.nan if x is None else x for x in v], dtype=float)


def correlation_from_dict(d: dict) -> CorrelationSet:
    C_cond = Pi = None
    if "C_cond" in d:
        C_cond = np.stack([np.stack([_arr(d["C_cond"][pair_key(a, b)]) for b in EVENT_TYPES])
                           for a in EVENT_TYPES])
        Pi = np.stack([np.stack([_arr(d["Pi"][pair_key(a, b)]) for b in EVENT_TYPES])
                       for a in EVENT_TYPES])
    probs = np.array([d["probs"][n] for n in TYPE_NAMES])
    return CorrelationSet(L=int(d["L"]), C=_arr(d["C"]), probs=probs, C_cond=C_cond, Pi=Pi)


def response_from_dict(d: dict) -> ResponseSet:
    S_pair = None
    if "S_pair" in d:
        S_pair = np.stack([np.stack([_arr(d["S_pair"][pair_key(a, b)]) for b in EVENT_TYPES])
                           for a in EVENT_TYPES])
    return ResponseSet(
        L_pos=int(d["L_pos"]), L_neg=int(d["L_neg"]), R=_arr(d["R"]), S=_arr(d["S"]),
        R_cond=np.stack([_arr(d["R_cond"][n]) for n in TYPE_NAMES]),
        S_cond=np.stack([_arr(d["S_cond"][n]) for n in TYPE_NAMES]),
        sigma_trade=float(d["sigma_trade"]),
        probs=np.array([d["probs"][n] for n in TYPE_NAMES]),
        S_pair=S_pair, D=None if d.get("D") is None else _arr(d["D"]),
    )


def write_json(obj: dict, path):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1))
    return path


def write_csv(rows, header, path, provenance=None):
    """One row per lag. An optional ``# ...`` provenance line precedes the header."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if (isinstance(v, float) and not np.isfinite(v)) else v for v in row])
    return path


def correlation_rows(corr: CorrelationSet):
    header = ["lag", "C"]
    if corr.C_cond is not None:
        header += [f"C_{pair_key(a, b)}" for a in EVENT_TYPES for b in EVENT_TYPES]
        header += [f"Pi_{pair_key(a, b)}" for a in EVENT_TYPES for b in EVENT_TYPES]
    rows = []
    for lag in range(corr.L + 1):
        row = [lag, float(corr.C[lag])]
        if corr.C_cond is not None:
            row += [float(corr.C_cond[a, b, lag]) for a in EVENT_TYPES for b in EVENT_TYPES]
            row += [float(corr.Pi[a, b, lag]) for a in EVENT_TYPES for b in EVENT_TYPES]
        rows.append(row)
    return header, rows


def response_rows(resp: ResponseSet):
    header = ["lag", "R", "R_se", "S", "R_NC", "R_C", "S_NC", "S_C"]
    rows = []
    for i, lag in enumerate(resp.lags):
        rows.append([int(lag), float(resp.R[i]), float(resp.R_se[i]) if resp.R_se is not None
                     else float("nan"), float(resp.S[i]), float(resp.R_cond[0, i]),
                     float(resp.R_cond[1, i]), float(resp.S_cond[0, i]), float(resp.S_cond[1, i])])
    return header, rows
