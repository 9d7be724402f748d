import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propimpact.errors import ValidationError
from propimpact.noisefit import fit_noise

LAGS = np.arange(1, 51)


def test_exact_recovery():
    base = 1.0 + 0.1 * np.sin(LAGS)
    res = fit_noise(base + 0.3 + 0.8 / LAGS, base, LAGS)
    assert res.params.D_LF == pytest.approx(0.3, abs=1e-12)
    assert res.params.D_HF == pytest.approx(0.8, abs=1e-12)
    assert res.clamped == (False, False) and res.sse < 1e-20
    assert res.fit_range == (1, 50)


def test_exact_recovery_on_scaled_curve():
    res = fit_noise(0.3 + 0.8 / LAGS, np.zeros(50), LAGS, fit_on_ld=True)
    assert res.params.D_LF == pytest.approx(0.3, abs=1e-12)
    assert res.params.D_HF == pytest.approx(0.8, abs=1e-12)
    assert res.to_dict()["fit_on_ld"] is True


def test_model_already_matches():
    base = np.linspace(2.0, 1.0, 50)
    res = fit_noise(base, base, LAGS)
    assert res.params.D_LF == pytest.approx(0.0, abs=1e-12)
    assert res.params.D_HF == pytest.approx(0.0, abs=1e-12)


def test_negative_coefficient_is_clamped():
    res = fit_noise(0.5 - 0.4 / LAGS, np.zeros(50), LAGS)
    assert res.clamped == (False, True)
    assert res.params.D_HF == 0
    # one-parameter least squares on the constant column is the mean
    assert res.params.D_LF == pytest.approx(np.mean(0.5 - 0.4 / LAGS))
    res = fit_noise(-0.05 + 2.0 / LAGS, np.zeros(50), LAGS)
    assert res.clamped[0] and res.params.D_LF == 0 and res.params.D_HF > 0
    res = fit_noise(-np.ones(50), np.zeros(50), LAGS)
    assert res.clamped == (True, True) and res.params.D_LF == res.params.D_HF == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 10), st.integers(0, 1000))
def test_scaling_and_clamped_cost(a, b, scale, seed):
    rng = np.random.default_rng(seed)
    y = a + b / LAGS + 0.01 * rng.standard_normal(50)
    res = fit_noise(y, np.zeros(50), LAGS)
    scaled = fit_noise(scale * y, np.zeros(50), LAGS)
    assert scaled.params.D_LF == pytest.approx(scale * res.params.D_LF, rel=1e-9, abs=1e-12)
    assert scaled.params.D_HF == pytest.approx(scale * res.params.D_HF, rel=1e-9, abs=1e-12)
    assert scaled.clamped == res.clamped
    X = np.column_stack([np.ones(50), 1 / LAGS])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    free = float(np.sum((y - X @ beta) ** 2))
    assert res.sse >= free - 1e-12
    # no feasible point on a coarse grid beats the reported optimum
    grid = np.linspace(0, 2, 41)
    best = min(float(np.sum((y - p - q / LAGS) ** 2)) for p in grid for q in grid)
    assert res.sse <= best + 1e-12


def test_input_validation():
    with pytest.raises(ValidationError):
        fit_noise([1.0], [0.0], [1])
    with pytest.raises(ValidationError):
        fit_noise([1.0, 2.0], [0.0, 0.0], [3, 3])
    with pytest.raises(ValidationError):
        fit_noise([1.0, 2.0], [0.0], [1, 2])
    with pytest.raises(ValidationError):
        fit_noise([1.0, np.nan], [0.0, 0.0], [1, 2])
