"""Least-squares fit of the two noise variances to a signature plot."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tim import NoiseParams


@dataclass(frozen=True)
class NoiseFitResult:
    params: NoiseParams
    fit_range: tuple[int, int]
    sse: float
    clamped: tuple[bool, bool]
    on_ld: bool = False

    def to_dict(self):
        return {"D_LF": self.params.D_LF, "D_HF": self.params.D_HF, "sse": self.sse,
                "range": list(self.fit_range),
                "clamped": {"D_LF": self.clamped[0], "D_HF": self.clamped[1]},
                "fit_on_ld": self.on_ld}


def fit_noise(D_emp, D_model_base, lags, fit_on_ld=False) -> NoiseFitResult:
    """Fit D_emp(l) - D_model_base(l) ~ D_LF + D_HF / l with D_LF, D_HF >= 0.

    ``lags`` gives the lag of each entry. With ``fit_on_ld`` the residuals
    are taken on l D(l) instead, i.e. l (D_emp - D_base) ~ D_LF l + D_HF.
    The two-parameter problem is solved exactly: the unconstrained optimum
    when it is feasible, otherwise the better of the two one-parameter
    boundary fits (or zero).
    """
    lags = np.asarray(lags, dtype=float)
    emp = np.asarray(D_emp, dtype=float)
    base = np.asarray(D_model_base, dtype=float)
    if not (lags.ndim == 1 and emp.shape == lags.shape == base.shape):
        raise ValidationError("curves and lags must be aligned 1-d arrays")
    y = emp - base
    if len(np.unique(lags)) < 2:
        raise ValidationError("need at least two distinct lags to separate D_LF from D_HF")
    if np.any(lags <= 0) or not np.all(np.isfinite(y)):
        raise ValidationError("lags must be positive and curves finite")
    X = np.column_stack([np.ones_like(lags), 1.0 / lags])
    if fit_on_ld:
        X, y = X * lags[:, None], y * lags

    def sse(beta):
        e = y - X @ beta
        return float(e @ e)

    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    if np.all(beta >= 0):
        best, clamped = beta, (False, False)
    else:
        candidates = [(np.zeros(2), (True, True))]
        for j in (0, 1):
            col = X[:, j]
            b = max(float(col @ y) / float(col @ col), 0.0)
            cand = np.zeros(2)
            cand[j] = b
            candidates.append((cand, (j != 0, j != 1)))
        best, clamped = min(candidates, key=lambda c: sse(c[0]))
    return NoiseFitResult(NoiseParams(float(best[0]), float(best[1])),
                          (int(lags.min()), int(lags.max())), sse(best), clamped, fit_on_ld)
