"""Discrete autoregressive (DAR) sign processes.

Each sign copies (probability rho) or flips (probability 1 - rho) the sign
found a random number of steps back, the lag being drawn from ``lam``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, NonDarRepresentableError, ValidationError

DENSE_MAX_ORDER = 2000
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class DarSpec:
    lam: np.ndarray
    rho: float
    allow_antipersistent: bool = False

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).ravel()
        if lam.size == 0:
            raise ValidationError("lag distribution is empty")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValidationError("lag probabilities must be finite and non-negative")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValidationError(f"lag probabilities sum to {lam.sum():.15g}, not 1")
        lo = 0.0 if self.allow_antipersistent else 0.5
        if not (lo <= self.rho < 1.0):
            raise ValidationError(f"copy probability must lie in [{lo}, 1), got {self.rho}")
        lam = lam.copy()
        lam.flags.writeable = False
        object.__setattr__(self, "lam", lam)

    @property
    def p(self) -> int:
        return len(self.lam)

    @property
    def a(self) -> np.ndarray:
        """Autoregressive weights (2 rho - 1) lambda_n."""
        return (2 * self.rho - 1) * self.lam

    @classmethod
    def order_one(cls, rho):
        return cls(np.array([1.0]), rho)

    @classmethod
    def power_law(cls, gamma, rho, p_max=10_000):
        """lambda_l proportional to l^((gamma - 3) / 2), truncated at p_max and normalised."""
        lags = np.arange(1, p_max + 1, dtype=float)
        lam = lags ** ((gamma - 3.0) / 2.0)
        return cls(lam / lam.sum(), rho)

    def to_dict(self):
        return {"p": self.p, "lambda": self.lam.tolist(), "rho": self.rho}

    @classmethod
    def from_dict(cls, d):
        lam = np.asarray(d["lambda"], dtype=float)
        if "p" in d and int(d["p"]) != len(lam):
            raise ValidationError("p does not match the length of lambda")
        return cls(lam, float(d["rho"]), bool(d.get("allow_antipersistent", False)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def burn_in(spec: DarSpec) -> int:
    return max(10 * spec.p, 10_000)


def resolve_parents(parent, flip, roots):
    """Evaluate ``x[t] = flip[t] * x[parent[t]]`` for every t by pointer jumping.

    ``parent[t] == t`` marks a root whose value is ``roots[t]``. Runs in
    O(n log depth) vectorised passes instead of a Python loop over t.
    """
    ptr = parent.astype(np.int64, copy=True)
    val = flip.astype(np.int8, copy=True)
    is_root = ptr == np.arange(len(ptr))
    val[is_root] = 1
    while True:
        nxt = ptr[ptr]
        if np.array_equal(nxt, ptr):
            break
        val *= val[ptr]
        ptr = nxt
    return (val * roots[ptr]).astype(np.int8)


def dar_parents(spec: DarSpec, n_total, rng):
    """Draw the parent index and copy/flip factor of every step."""
    p = spec.p
    t = np.arange(n_total)
    lags = rng.choice(p, size=n_total, p=spec.lam) + 1 if p > 1 else np.ones(n_total, np.int64)
    flip = np.where(rng.random(n_total) < spec.rho, 1, -1).astype(np.int8)
    parent = t - lags
    start = min(p, n_total)
    parent[:start] = t[:start]
    return parent, flip


def simulate(spec: DarSpec, n: int, seed=None, rng=None) -> np.ndarray:
    """Stationary DAR sign path of length ``n`` (after discarding the burn-in)."""
    if n < 1:
        raise ValidationError("path length must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    warm = burn_in(spec)
    total = n + warm
    parent, flip = dar_parents(spec, total, rng)
    roots = rng.choice(np.array([-1, 1], dtype=np.int8), size=total)
    return resolve_parents(parent, flip, roots)[warm:]


def _yw_dense(a, L):
    """Exact C(0..L) by solving for C(1..p) then running the recursion forward."""
    p = len(a)
    idx = np.arange(1, p + 1)
    M = np.eye(p)
    rhs = np.zeros(p)
    for l in range(1, p + 1):
        k = np.abs(l - idx)
        zero = k == 0
        rhs[l - 1] += a[zero].sum()
        np.add.at(M[l - 1], k[~zero] - 1, -a[~zero])
    c = np.linalg.solve(M, rhs)
    C = np.empty(max(L, p) + 1)
    C[0] = 1.0
    C[1: p + 1] = c
    rev = a[::-1]
    for l in range(p + 1, L + 1):
        C[l] = np.dot(rev, C[l - p: l])
    return C[: L + 1]


def _yw_spectral(a, L):
    """C(0..L) from the spectral density 1 / |1 - A(w)|^2 (large orders)."""
    size = 1 << int(np.ceil(np.log2(64 * max(L, len(a)) + 1)))
    coeffs = np.zeros(size)
    coeffs[1: len(a) + 1] = a
    spec = 1.0 / np.abs(1.0 - np.fft.rfft(coeffs)) ** 2
    c = np.fft.irfft(spec, size)
    return c[: L + 1] / c[0]


def yule_walker_forward(spec: DarSpec, L: int) -> np.ndarray:
    """Sign autocorrelation C(0..L) implied by the DAR specification.

    C(l) = (2 rho - 1) sum_n lambda_n C(l - n), C(-k) = C(k), C(0) = 1.
    """
    if L < 0:
        raise ValidationError("L must be non-negative")
    if spec.p <= DENSE_MAX_ORDER:
        return _yw_dense(spec.a, L)
    return _yw_spectral(spec.a, L)


def yule_walker_inverse(C, tol=1e-8) -> DarSpec:
    """DAR(L) specification reproducing C(0..L).

    Solves the Toeplitz system sum_n a_n C(|l - n|) = C(l), l = 1..L, then
    2 rho - 1 = sum(a) and lambda = a / sum(a). A zero system (i.i.d. signs)
    maps to rho = 1/2 with all lag mass on lag 1.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 1 or len(C) < 2:
        raise ValidationError("need C(0..L) with L >= 1")
    if abs(C[0] - 1.0) > 1e-12:
        raise ValidationError("C(0) must be 1")
    L = len(C) - 1
    rhs = C[1:]
    if not np.any(rhs):
        lam = np.zeros(L)
        lam[0] = 1.0
        return DarSpec(lam, 0.5)
    col = C[:L]
    if L <= DENSE_MAX_ORDER:
        T = sla.toeplitz(col)
        cond = np.linalg.cond(T)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise ConditioningError("Yule-Walker system is ill-conditioned", cond)
        a = sla.solve(T, rhs, assume_a="sym")
    else:
        a = sla.solve_toeplitz(col, rhs)
    total = a.sum()
    if abs(total) < 1e-14:
        raise NonDarRepresentableError("autoregressive weights sum to zero; lambda undefined")
    lam = a / total
    if lam.min() < -tol:
        raise NonDarRepresentableError(
            f"lag weight {lam.min():.3e} at lag {int(lam.argmin()) + 1} is negative"
        )
    lam = np.clip(lam, 0.0, None)
    lam /= lam.sum()
    rho = (1.0 + total) / 2.0
    try:
        return DarSpec(lam, rho)
    except ValidationError as exc:
        raise NonDarRepresentableError(str(exc)) from exc


def hdim1_kernel_map(spec: DarSpec, G1: float) -> np.ndarray:
    """Differential propagator of the equivalent transient model, lags 1..p.

    With a DAR order flow the history-dependent model
    r_t = G(1) (eps_t - E[eps_t | past]) is a transient impact model with
    this kernel.
    """
    return -(2 * spec.rho - 1) * G1 * spec.lam


def implied_propagator(spec: DarSpec, G1: float, L: int) -> np.ndarray:
    """G(1..L) with G(l + 1) - G(l) equal to the mapped differential kernel."""
    dG = np.zeros(L)
    m = min(spec.p, L - 1)
    dG[1: m + 1] = hdim1_kernel_map(spec, G1)[:m]
    dG[0] = G1
    return np.cumsum(dG)


def conditional_predictor(spec: DarSpec, history) -> float:
    """E[eps_t | past] = (2 rho - 1) sum_l lambda_l eps_{t-l}; ``history[-1]`` is eps_{t-1}."""
    history = np.asarray(history, dtype=float)
    if len(history) < spec.p:
        raise ValidationError(f"history of length {len(history)} is shorter than the order {spec.p}")
    past = history[::-1][: spec.p]
    return float((2 * spec.rho - 1) * np.dot(spec.lam, past))
