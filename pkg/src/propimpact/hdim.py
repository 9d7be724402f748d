"""History dependent impact model with two event types (HDIM2).

The return of an event of type ``c`` is

    r_t = G_c(1) eps_t + sum_{n>0} sum_a kappa[a, c](n) I_a(t-n) eps_{t-n}  (+ noise),

and calibration/prediction replace three- and four-point sign/type
correlations by products of two-point ones. Arrays are indexed
``kappa[past, present, n - 1]`` for ``n = 1..L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import HorizonError, ValidationError
from .stats import TYPE_NAMES, CorrelationSet, ResponseSet, _cumulate, pair_key
from .tim import NoiseParams, TimKernel, lstsq_solve

NC, C = 0, 1


@dataclass(frozen=True, eq=False)
class InfluenceKernel:
    kappa: np.ndarray
    G1: np.ndarray
    unconstrained: bool = False
    residual: float = 0.0
    factorization_residual: float | None = None

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float)
        G1 = np.asarray(self.G1, dtype=float).ravel()
        if kappa.ndim != 3 or kappa.shape[:2] != (2, 2):
            raise ValidationError("kappa must have shape (2, 2, L)")
        if G1.shape != (2,):
            raise ValidationError("G1 needs one entry per event type")
        if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(G1))):
            raise ValidationError("kernel entries must be finite")
        if not self.unconstrained and (np.any(kappa[:, NC]) or G1[NC] != 0):
            raise ValidationError("an NC event cannot move the price: kappa[:, NC] and G_NC(1) must be 0")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "G1", G1)

    @property
    def L(self) -> int:
        return self.kappa.shape[2]

    def to_dict(self):
        pairs = [(a, b) for a in (NC, C) for b in (NC, C)] if self.unconstrained \
            else [(NC, C), (C, C)]
        return {
            "L": self.L,
            "kappa": {pair_key(a, b): self.kappa[a, b].tolist() for a, b in pairs},
            "G1": {TYPE_NAMES[k]: float(self.G1[k]) for k in (NC, C)},
            "residual": self.residual,
            "factorization_residual": self.factorization_residual,
            "unconstrained": self.unconstrained,
        }

    @classmethod
    def from_dict(cls, d):
        L = int(d["L"])
        kappa = np.zeros((2, 2, L))
        for a in (NC, C):
            for b in (NC, C):
                key = pair_key(a, b)
                if key in d["kappa"]:
                    kappa[a, b] = d["kappa"][key]
        G1 = np.array([d["G1"][TYPE_NAMES[k]] for k in (NC, C)], dtype=float)
        return cls(kappa, G1, bool(d.get("unconstrained", False)), float(d.get("residual", 0.0)),
                   d.get("factorization_residual"))


def embed_tim_as_hdim(kernel: TimKernel) -> InfluenceKernel:
    """kappa[a, c](n) = dG_a(n) for every present type c, G_c(1) = dG_c(0).

    A TIM1 kernel feeds both event types with its single propagator. The
    result generally has non-zero NC columns, so it is flagged unconstrained.
    """
    dG = kernel.dG if kernel.n_types == 2 else np.repeat(kernel.dG, 2, axis=0)
    kappa = np.repeat(dG[:, None, 1:], 2, axis=1)
    return InfluenceKernel(kappa, dG[:, 0].copy(), unconstrained=True)


def hdim2_matrix(corr: CorrelationSet, L: int):
    """Factorised calibration system for the C column.

    Unknowns ``[G_C(1), kappa[NC, C](1..L), kappa[C, C](1..L)]``. Row 0 is
    the equal-time equation, then rows (pi1, l) for pi1 in (NC, C), l = 1..L.
    """
    P = corr.probs
    n = np.arange(1, L + 1)
    first = np.concatenate([[1.0]] + [P[a] * corr.cc(a, C, n) for a in (NC, C)])
    rows = [first[None, :]]
    lag = n[:, None]
    for p1 in (NC, C):
        block = [corr.cc(p1, C, n)[:, None]]
        block += [P[a] * corr.cc(a, p1, n[None, :] - lag) for a in (NC, C)]
        rows.append(np.hstack(block))
    return np.vstack(rows)


def calibrate_hdim2(corr: CorrelationSet, resp: ResponseSet, L: int,
                    factorization_residual=None) -> InfluenceKernel:
    """Solve the factorised pair-response equations for G_C(1) and kappa[:, C].

    Uses S_C(0) for the equal-time row and S_{pi1, C}(l), l = 1..L, for the
    rest. NC columns stay zero.
    """
    if L < 1:
        raise ValidationError("L must be at least 1")
    if corr.C_cond is None or resp.S_pair is None:
        raise ValidationError("HDIM2 needs conditional correlations and the pair response")
    if L > corr.L or L >= resp.S_pair.shape[2]:
        raise ValidationError(f"kernel length {L} exceeds the measured lags")
    M = hdim2_matrix(corr, L)
    s = np.concatenate([[float(resp.s_at(0, C))], resp.S_pair[NC, C, 1:L + 1],
                        resp.S_pair[C, C, 1:L + 1]])
    x, res = lstsq_solve(M, s, "HDIM2 system")
    kappa = np.zeros((2, 2, L))
    kappa[NC, C] = x[1:L + 1]
    kappa[C, C] = x[L + 1:]
    return InfluenceKernel(kappa, np.array([0.0, x[0]]), residual=res,
                           factorization_residual=factorization_residual)


def _check_horizon(corr, need):
    if need > corr.L:
        raise HorizonError(need, corr.L)


def differential_response_hdim(kernel: InfluenceKernel, corr: CorrelationSet, lags):
    """Factorised S_a(l) at signed lags, shape (2, len(lags))."""
    lags = np.asarray(lags)
    _check_horizon(corr, kernel.L + int(np.max(np.abs(lags), initial=0)))
    P = corr.probs
    n = np.arange(1, kernel.L + 1)[None, :]
    out = np.zeros((2, len(lags)))
    # weight of a past signed event of type p, averaged over the present type
    w = np.einsum("c,pcn->pn", P, kernel.kappa)
    now = lags == 0
    for a in (NC, C):
        for b in (NC, C):
            out[a] += P[b] * kernel.G1[b] * corr.cc(a, b, lags)
            # at lag 0 the present event is the conditioning one, so its type is a
            weight = np.where(now[:, None], kernel.kappa[b, a][None, :], w[b][None, :])
            out[a] += P[b] * np.sum(corr.cc(a, b, lags[:, None] - n) * weight, axis=1)
    return out


def predict_response_hdim2(kernel: InfluenceKernel, corr: CorrelationSet, L_pos: int, L_neg: int):
    """Model responses over -L_neg..L_pos; returns ``(lags, R, R_cond)``."""
    neg = differential_response_hdim(kernel, corr, -np.arange(1, L_neg + 1))
    pos = differential_response_hdim(kernel, corr, np.arange(0, L_pos + 1))
    per_type = _cumulate(neg, pos)
    return np.arange(-L_neg, L_pos + 1), corr.probs @ per_type, per_type


def _equal_time_variance(kernel, corr):
    """Factorised E[r_t^2] without noise."""
    P, K, G = corr.probs, kernel.kappa, kernel.G1
    L = kernel.L
    n = np.arange(1, L + 1)
    total = float(P @ G**2)
    for a in (NC, C):
        for b in (NC, C):
            occ = corr.Pi[a, b, 1:L + 1] + 1.0
            total += P[a] * P[b] * np.sum(K[a, b] ** 2 * occ)
            total += 2 * P[a] * P[b] * G[b] * (K[a, b] @ corr.cc(a, b, n))
    for c in (NC, C):
        for a in (NC, C):
            for b in (NC, C):
                # m > n, earlier event type a at t - m, later type b at t - n
                xc = signal.correlate(K[a, c], K[b, c])[L:]
                total += 2 * P[a] * P[b] * P[c] * (xc @ corr.cc(a, b, np.arange(1, L)))
    return total


def _lagged_covariance(kernel, corr, n_max):
    """Factorised E[r_t r_{t+n}] for n = 1..n_max - 1 (index n - 1)."""
    P, K, G = corr.probs, kernel.kappa, kernel.G1
    L = kernel.L
    n = np.arange(1, n_max)
    i = np.arange(1, L + 1)
    w = np.einsum("c,pcn->pn", P, K)
    inside = n <= L
    f = np.zeros(len(n))
    for a in (NC, C):
        for b in (NC, C):
            pab = P[a] * P[b]
            # immediate impact with immediate impact
            f += pab * G[a] * G[b] * corr.cc(a, b, n)
            # earlier immediate impact, later influence term; i = n handled below
            cross = corr.cc(a, b, n[:, None] - i[None, :]) @ w[b]
            cross[inside] -= w[b][n[inside] - 1] * corr.cc(a, b, 0)
            f += pab * G[a] * cross
            # the influence term reaches back to the same event: occupancy factor
            occ = np.zeros(len(n))
            occ[inside] = K[a, b][n[inside] - 1] * (corr.Pi[a, b, n[inside]] + 1.0)
            f += pab * G[a] * occ
            # earlier influence term, later immediate impact
            f += pab * G[a] * (corr.cc(b, a, n[:, None] + i[None, :]) @ w[b])
    # influence with influence, the later term reaching back to the earlier present event
    u = np.array([sum(P[a] * (K[a, b] @ corr.cc(a, b, i)) for a in (NC, C)) for b in (NC, C)])
    for b in (NC, C):
        kn = np.zeros(len(n))
        kn[inside] = np.einsum("c,cn->n", P, K[b][:, n[inside] - 1])
        f += P[b] * u[b] * kn
    # influence with influence, j != n
    k = np.arange(-(L - 1), L)
    for p1 in (NC, C):
        for p2 in (NC, C):
            for p3 in (NC, C):
                for p4 in (NC, C):
                    coef = P[p1] * P[p2] * P[p3] * P[p4]
                    A = signal.correlate(K[p1, p2], K[p3, p4])  # A[k] = sum_{i-j=k}
                    full = corr.cc(p1, p3, n[:, None] + k[None, :]) @ A
                    excl = np.zeros(len(n))
                    excl[inside] = K[p3, p4][n[inside] - 1] * (K[p1, p2] @ corr.cc(p1, p3, i))
                    f += coef * (full - excl) * (corr.Pi[p2, p4, n] + 1.0)
    return f


def signature_hdim2(kernel: InfluenceKernel, corr: CorrelationSet, noise: NoiseParams, lags):
    """Factorised signature plot D(l) of the history dependent model.

    D(l) l = l [D_LF + D_HF / l + E r^2] + 2 sum_{0<n<l} (l - n) E[r_t r_{t+n}],
    every expectation expanded with the two-point factorisation and the
    occupancy correlations Pi for coincident event times.
    """
    lags = np.atleast_1d(np.asarray(lags))
    if corr.C_cond is None or corr.Pi is None:
        raise ValidationError("HDIM signature needs conditional and occupancy correlations")
    l_max = int(np.max(lags))
    _check_horizon(corr, l_max + kernel.L - 1)
    var = _equal_time_variance(kernel, corr)
    f = _lagged_covariance(kernel, corr, l_max)
    out = np.empty(len(lags), dtype=float)
    for idx, l in enumerate(lags):
        l = int(l)
        m = np.arange(1, l)
        out[idx] = noise.D_LF + noise.D_HF / l + var + 2.0 * np.sum((l - m) * f[: l - 1]) / l
    return out
