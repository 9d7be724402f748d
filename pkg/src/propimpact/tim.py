"""Transient impact models with one (TIM1) or two (TIM2) propagators.

Kernels are stored in differential form: ``dG[k, n]`` is the per-step
return contribution of a type-``k`` event ``n`` trades ago, with
``dG[k, 0] = G_k(1)``. The propagator is its running sum,
``G_k(l) = sum_{n<l} dG[k, n]``, and stays flat beyond the truncation lag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import signal

from .errors import ConditioningError, HorizonError, ValidationError
from .stats import TYPE_NAMES, CorrelationSet, ResponseSet

VARIANTS = ("TIM1", "TIM2")


@dataclass(frozen=True)
class NoiseParams:
    D_LF: float = 0.0
    D_HF: float = 0.0

    def __post_init__(self):
        if not (self.D_LF >= 0 and self.D_HF >= 0):
            raise ValidationError("noise variances must be non-negative")


@dataclass(frozen=True, eq=False)
class TimKernel:
    variant: str
    dG: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        dG = np.atleast_2d(np.asarray(self.dG, dtype=float))
        if dG.shape[0] != (1 if self.variant == "TIM1" else 2):
            raise ValidationError(f"{self.variant} needs {1 if self.variant == 'TIM1' else 2} kernel rows")
        if not np.all(np.isfinite(dG)):
            raise ValidationError("kernel entries must be finite")
        object.__setattr__(self, "dG", dG)

    @property
    def L(self) -> int:
        return self.dG.shape[1] - 1

    @property
    def n_types(self) -> int:
        return self.dG.shape[0]

    @property
    def G(self) -> np.ndarray:
        """G_k(1..L+1), shape (n_types, L+1)."""
        return np.cumsum(self.dG, axis=1)

    @property
    def G1(self) -> np.ndarray:
        return self.dG[:, 0].copy()

    def is_constant(self) -> bool:
        return not np.any(self.dG[:, 1:])

    def propagator(self, lags):
        """G_k(l) for arbitrary integer lags (0 for l <= 0, flat beyond L+1)."""
        lags = np.asarray(lags)
        G = self.G
        idx = np.clip(lags, 1, self.L + 1) - 1
        return np.where(lags[None, ...] >= 1, G[:, idx], 0.0)

    @classmethod
    def from_propagator(cls, variant, G):
        """Build from G_k(1..L+1)."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return cls(variant, np.diff(G, axis=1, prepend=0.0))

    def to_dict(self):
        names = ("ALL",) if self.variant == "TIM1" else TYPE_NAMES
        return {
            "variant": self.variant, "L": self.L,
            "G": {k: self.G[i].tolist() for i, k in enumerate(names)},
            "dG": {k: self.dG[i].tolist() for i, k in enumerate(names)},
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d):
        names = ("ALL",) if d["variant"] == "TIM1" else TYPE_NAMES
        return cls(d["variant"], np.array([d["dG"][k] for k in names]), float(d.get("residual", 0.0)))


def lstsq_solve(M, s, what="linear system"):
    """Pivoted-QR least squares; rank deficiency is an error, not a silent fix."""
    x, _, rank, _ = sla.lstsq(M, s, lapack_driver="gelsy")
    if rank < M.shape[1]:
        raise ConditioningError(f"{what} is rank deficient ({rank} < {M.shape[1]})",
                                np.linalg.cond(M))
    return x, float(np.max(np.abs(M @ x - s)))


def _check_lengths(corr, resp, L):
    if L < 0:
        raise ValidationError("L must be non-negative")
    if L > corr.L or L > resp.L_pos:
        raise ValidationError(
            f"kernel length {L} exceeds the measured lags (corr {corr.L}, response {resp.L_pos})")


def calibrate_tim1(corr: CorrelationSet, resp: ResponseSet, L: int, n_eq=None) -> TimKernel:
    """Solve S(l) = sum_{n=0..L} dG(n) C(n - l) for l = 0..n_eq-1 (default n_eq = L+1)."""
    n_eq = L + 1 if n_eq is None else n_eq
    _check_lengths(corr, resp, max(L, n_eq - 1))
    rows = np.arange(n_eq)[:, None]
    cols = np.arange(L + 1)[None, :]
    M = corr.c(np.abs(cols - rows))
    s = resp.s_at(np.arange(n_eq))
    x, res = lstsq_solve(M, s, "TIM1 system")
    return TimKernel("TIM1", x[None, :], res)


def tim2_matrix(corr: CorrelationSet, L: int, n_eq: int):
    """Block system of the two-propagator calibration, rows (type, lag)."""
    P = corr.probs
    l = np.arange(n_eq)[:, None]
    n = np.arange(L + 1)[None, :]
    return np.block([[P[b] * corr.cc(a, b, l - n) for b in (0, 1)] for a in (0, 1)])


def calibrate_tim2(corr: CorrelationSet, resp: ResponseSet, L: int, n_eq=None) -> TimKernel:
    """Solve S_a(l) = sum_b P(b) sum_{n=0..L} dG_b(n) C_ab(l - n) jointly for both types."""
    n_eq = L + 1 if n_eq is None else n_eq
    _check_lengths(corr, resp, max(L, n_eq - 1))
    if corr.C_cond is None or not np.all(np.isfinite(resp.S_cond)):
        raise ValidationError("TIM2 needs conditional correlations and responses for both types")
    M = tim2_matrix(corr, L, n_eq)
    s = np.concatenate([resp.s_at(np.arange(n_eq), a) for a in (0, 1)])
    x, res = lstsq_solve(M, s, "TIM2 block system")
    return TimKernel("TIM2", x.reshape(2, L + 1), res)


def _differential_prediction(kernel: TimKernel, corr: CorrelationSet, lags, fast=None):
    """Model S (TIM1) or S_a (TIM2) at the given signed lags, shape (n_types, len(lags))."""
    lags = np.asarray(lags)
    need = kernel.L + int(np.max(np.abs(lags), initial=0))
    if fast is None:
        fast = kernel.is_constant()
    if fast:
        need = int(np.max(np.abs(lags), initial=0))
    if need > corr.L:
        raise HorizonError(need, corr.L)
    if kernel.variant == "TIM1":
        if fast:
            return (kernel.dG[0, 0] * corr.c(lags))[None, :]
        n = np.arange(kernel.L + 1)[None, :]
        return (corr.c(n - lags[:, None]) @ kernel.dG[0])[None, :]
    P = corr.probs
    out = np.zeros((2, len(lags)))
    for a in (0, 1):
        for b in (0, 1):
            if fast:
                out[a] += P[b] * kernel.dG[b, 0] * corr.cc(a, b, lags)
            else:
                n = np.arange(kernel.L + 1)[None, :]
                out[a] += P[b] * (corr.cc(a, b, lags[:, None] - n) @ kernel.dG[b])
    return out


def predict_response_tim(kernel: TimKernel, corr: CorrelationSet, L_pos: int, L_neg: int,
                         fast=None):
    """Model responses over lags -L_neg..L_pos.

    Returns ``(lags, R, R_cond)``; ``R_cond`` is None for TIM1. Negative lags
    follow R(-l) = -sum_{0<i<=l} S(-i), positive lags R(l) = sum_{0<=i<l} S(i).
    A constant kernel takes the short path that only needs correlations up
    to the largest lag.
    """
    from .stats import _cumulate

    neg = _differential_prediction(kernel, corr, -np.arange(1, L_neg + 1), fast)
    pos = _differential_prediction(kernel, corr, np.arange(0, L_pos + 1), fast)
    lags = np.arange(-L_neg, L_pos + 1)
    per_type = _cumulate(neg, pos)
    if kernel.variant == "TIM1":
        return lags, per_type[0], None
    return lags, corr.probs @ per_type, per_type


def _needed_horizon(kernel, lags):
    return int(np.max(lags)) + kernel.L


def signature_tim1(kernel: TimKernel, corr: CorrelationSet, noise: NoiseParams, lags):
    """Signature plot of the one-propagator model.

    D(l) = (1/l) sum_{0<=n<l} G(l-n)^2 + (1/l) sum_{n>0} [G(l+n) - G(n)]^2
           + 2 Psi(l) + D_HF / l + D_LF,
    with Psi collecting the sign-correlation cross terms. Because G is flat
    beyond the truncation lag, every tail sum stops exactly at n = L + 1.
    """
    if kernel.variant != "TIM1":
        raise ValidationError("signature_tim1 needs a TIM1 kernel")
    lags = np.atleast_1d(np.asarray(lags))
    need = _needed_horizon(kernel, lags)
    if need > corr.L:
        raise HorizonError(need, corr.L)
    tail = kernel.L + 1
    m = np.arange(1, tail + 1)
    out = np.empty(len(lags), dtype=float)
    for i, l in enumerate(lags):
        l = int(l)
        fut = kernel.propagator(l - np.arange(l))[0]          # G(l - n), n = 0..l-1
        past = (kernel.propagator(l + m) - kernel.propagator(m))[0]  # m = 1..L+1
        c_f = corr.c(np.arange(l))
        c_p = corr.c(np.arange(tail))
        tf = sla.matmul_toeplitz(c_f, fut)
        tp = sla.matmul_toeplitz(c_p, past)
        sq = fut @ fut + past @ past
        psi_f = 0.5 * (fut @ tf - fut @ fut)
        psi_p = 0.5 * (past @ tp - past @ past)
        # sum_{n<l, m>0} G(l-n) [G(l+m)-G(m)] C(n+m) as a convolution over k = n + m
        conv = signal.convolve(fut, past)                   # index j <-> k = j + 1
        psi_x = conv @ corr.c(np.arange(1, len(conv) + 1))
        psi = (psi_f + psi_p + psi_x) / l
        out[i] = sq / l + 2 * psi + noise.D_HF / l + noise.D_LF
    return out


def signature_tim2(kernel: TimKernel, corr: CorrelationSet, noise: NoiseParams, lags, fast=None):
    """Signature plot of the two-propagator model (exact for the linear model).

    Chronological convention: C_ab(k) pairs an earlier type-a event with a
    type-b event k trades later. A constant kernel takes the short path
    D_LF + D_HF/l + sum_a P(a) G_a(1)^2
        + (2/l) sum_{0<=n<m<l} sum_ab P(a)P(b) G_a(1) G_b(1) C_ab(m-n).
    """
    if kernel.variant != "TIM2":
        raise ValidationError("signature_tim2 needs a TIM2 kernel")
    lags = np.atleast_1d(np.asarray(lags))
    if fast is None:
        fast = kernel.is_constant()
    if fast:
        return _signature_constant(kernel.dG[:, 0], corr, noise, lags)
    need = _needed_horizon(kernel, lags)
    if need > corr.L:
        raise HorizonError(need, corr.L)
    P = corr.probs
    tail = kernel.L + 1
    m = np.arange(1, tail + 1)
    out = np.empty(len(lags), dtype=float)
    for i, l in enumerate(lags):
        l = int(l)
        fut = kernel.propagator(l - np.arange(l))          # (2, l): G_a(l - n)
        past = kernel.propagator(l + m) - kernel.propagator(m)  # (2, L+1), m = 1..L+1
        total = float(P @ (np.sum(fut**2, axis=1) + np.sum(past**2, axis=1)))
        for a in (0, 1):
            for b in (0, 1):
                w = P[a] * P[b]
                # future pairs n < m, earlier event of type a at n
                xc = signal.correlate(fut[b], fut[a])[l:]  # k = 1..l-1: sum_n fut_a[n] fut_b[n+k]
                total += 2 * w * xc @ corr.cc(a, b, np.arange(1, l))
                # past pairs 0 < n < m, the event m trades back is the earlier one (type b)
                xp = signal.correlate(past[b], past[a])[tail:]
                total += 2 * w * xp @ corr.cc(b, a, np.arange(1, tail))
                # future event of type a at n, past event of type b at m back: lag n + m
                cv = signal.convolve(fut[a], past[b])
                total += 2 * w * cv @ corr.cc(b, a, np.arange(1, len(cv) + 1))
        out[i] = total / l + noise.D_LF + noise.D_HF / l
    return out


def _signature_constant(G1, corr, noise, lags):
    P = corr.probs
    need = int(np.max(lags)) - 1
    if need > corr.L:
        raise HorizonError(need, corr.L)
    out = np.empty(len(lags), dtype=float)
    base = noise.D_LF + float(P @ (G1**2))
    for i, l in enumerate(lags):
        l = int(l)
        k = np.arange(1, l)
        acc = 0.0
        for a in (0, 1):
            for b in (0, 1):
                acc += P[a] * P[b] * G1[a] * G1[b] * np.sum((l - k) * corr.cc(a, b, k))
        out[i] = base + noise.D_HF / l + 2 * acc / l
    return out
