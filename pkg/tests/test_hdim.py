import json

import numpy as np
import pytest

from propimpact import hdim, stats, synth, tim
from propimpact.errors import HorizonError, ValidationError

from test_tim import P, corr_from, dar_corr, resp_from

NC, C = 0, 1


def typed_corr_pi(L, seed=0):
    """Conditional correlations plus occupancy correlations with zero type marginals."""
    rng = np.random.default_rng(seed)
    base = dar_corr(L)
    cc = base[None, None, :] * (1 + 0.2 * rng.uniform(-1, 1, (2, 2, L + 1)))
    cc[:, :, 0] = np.diag(1 / P)
    v = np.array([P[C], -P[NC]])
    x = -0.3 * np.exp(-np.arange(L + 1) / 3.0)
    pi = x[None, None, :] * np.outer(v, v)[:, :, None] / (P[NC] * P[C])
    pi[:, :, 0] = np.diag(1 / P) - 1
    return stats.CorrelationSet(L=L, C=base, probs=P, C_cond=cc, Pi=pi)


def random_kernel(L, seed=1):
    rng = np.random.default_rng(seed)
    kappa = np.zeros((2, 2, L))
    kappa[:, C] = -0.2 * np.arange(1, L + 1) ** -1.0 * (1 + 0.3 * rng.standard_normal((2, L)))
    return hdim.InfluenceKernel(kappa, np.array([0.0, 0.9]))


def factorised_pair_response(kernel, corr, p1, l):
    """S_{p1,C}(l) of the factorised model, written as an explicit loop over influence lags."""
    Pr = corr.probs
    total = kernel.G1[C] * corr.cc(p1, C, l)
    for a in (NC, C):
        for n in range(1, kernel.L + 1):
            k = kernel.kappa[a, C, n - 1]
            if n > l:
                total += k * Pr[a] * corr.cc(a, p1, n - l)
            elif n < l:
                total += k * Pr[a] * corr.cc(p1, a, l - n)
            elif a == p1:
                total += k
    return total


def test_kernel_validation():
    kappa = np.zeros((2, 2, 3))
    kappa[NC, NC, 0] = 0.1
    with pytest.raises(ValidationError):
        hdim.InfluenceKernel(kappa, np.array([0.0, 1.0]))
    with pytest.raises(ValidationError):
        hdim.InfluenceKernel(np.zeros((2, 2, 3)), np.array([0.5, 1.0]))
    hdim.InfluenceKernel(kappa, np.array([0.5, 1.0]), unconstrained=True)
    with pytest.raises(ValidationError):
        hdim.InfluenceKernel(np.zeros((3, 2, 3)), np.array([0.0, 1.0]))


def test_forward_round_trip():
    L = 12
    corr = typed_corr_pi(3 * L)
    true = random_kernel(L)
    S_pair = np.zeros((2, 2, L + 1))
    for p1 in (NC, C):
        for l in range(1, L + 1):
            S_pair[p1, C, l] = factorised_pair_response(true, corr, p1, l)
    S0 = hdim.differential_response_hdim(true, corr, [0])[:, 0]
    resp = resp_from(np.column_stack([S0, np.zeros((2, L))]))
    resp = stats.ResponseSet(**{**resp.__dict__, "S_pair": S_pair})
    got = hdim.calibrate_hdim2(corr, resp, L)
    assert np.max(np.abs(got.kappa - true.kappa)) < 1e-10
    assert got.G1[C] == pytest.approx(true.G1[C], abs=1e-10)
    assert np.all(got.kappa[:, NC] == 0) and got.G1[NC] == 0


def test_zero_influence_response_and_signature():
    L = 5
    corr = typed_corr_pi(40)
    k = hdim.InfluenceKernel(np.zeros((2, 2, L)), np.array([0.0, 1.3]))
    lags = np.arange(-4, 10)
    S = hdim.differential_response_hdim(k, corr, lags)
    for a in (NC, C):
        assert np.allclose(S[a], P[C] * 1.3 * corr.cc(a, C, lags), atol=1e-15)
    const = tim.TimKernel("TIM2", np.array([[0.0], [1.3]]))
    noise = tim.NoiseParams(0.1, 0.2)
    sig_lags = np.array([1, 4, 20])
    assert np.allclose(hdim.signature_hdim2(k, corr, noise, sig_lags),
                       tim.signature_tim2(const, corr, noise, sig_lags), atol=1e-13)


@pytest.mark.parametrize("seed", [0, 1])
def test_embedded_tim_is_equivalent(seed):
    L = 8
    corr = typed_corr_pi(40, seed)
    rng = np.random.default_rng(seed + 10)
    dG = np.vstack([np.r_[0.2, rng.normal(0, 0.1, L)], np.r_[1.0, rng.normal(0, 0.1, L)]])
    k2 = tim.TimKernel("TIM2", dG)
    emb = hdim.embed_tim_as_hdim(k2)
    assert emb.unconstrained and np.array_equal(emb.kappa[:, NC], emb.kappa[:, C])
    _, R_tim, Rc_tim = tim.predict_response_tim(k2, corr, 20, 10)
    _, R_h, Rc_h = hdim.predict_response_hdim2(emb, corr, 20, 10)
    assert np.max(np.abs(R_tim - R_h)) < 1e-12
    assert np.max(np.abs(Rc_tim - Rc_h)) < 1e-12
    lags = np.array([1, 2, 7, 25])
    noise = tim.NoiseParams(0.05, 0.1)
    assert np.max(np.abs(hdim.signature_hdim2(emb, corr, noise, lags)
                         - tim.signature_tim2(k2, corr, noise, lags, fast=False))) < 1e-12


def test_embedding_single_propagator():
    k1 = tim.TimKernel("TIM1", np.array([[1.0, -0.2, -0.1]]))
    emb = hdim.embed_tim_as_hdim(k1)
    assert np.allclose(emb.G1, [1.0, 1.0])
    assert np.allclose(emb.kappa, np.broadcast_to([-0.2, -0.1], (2, 2, 2)))


def test_horizon_checks():
    corr = typed_corr_pi(10)
    k = random_kernel(6)
    with pytest.raises(HorizonError):
        hdim.predict_response_hdim2(k, corr, 5, 0)
    hdim.predict_response_hdim2(k, corr, 4, 4)
    with pytest.raises(HorizonError):
        hdim.signature_hdim2(k, corr, tim.NoiseParams(), [6])
    hdim.signature_hdim2(k, corr, tim.NoiseParams(), [5])


def test_response_invariants():
    corr = typed_corr_pi(40)
    k = random_kernel(10)
    lags, R, Rc = hdim.predict_response_hdim2(k, corr, 20, 10)
    assert R[lags == 0][0] == 0
    assert np.allclose(P @ Rc, R, atol=1e-15)
    S0 = hdim.differential_response_hdim(k, corr, np.arange(20))
    assert np.allclose(Rc[:, lags > 0], np.cumsum(S0, axis=1), atol=1e-13)
    # an NC event never moves the price itself
    assert S0[NC, 0] == 0


def test_transient_data_gives_zero_influence(large_tick_series):
    corr = stats.correlations(large_tick_series, 12)
    resp = stats.response(large_tick_series, 12, 0)
    k = hdim.calibrate_hdim2(corr, resp, 10)
    assert np.max(np.abs(k.kappa)) < 1e-9
    assert k.G1[C] == pytest.approx(1.0, abs=1e-12)


def test_small_tick_liquidity_kernel(small_tick_series):
    corr = stats.correlations(small_tick_series, 40)
    resp = stats.response(small_tick_series, 40, 0)
    k = hdim.calibrate_hdim2(corr, resp, 20)
    true = synth.small_tick_kernel()
    assert k.G1[C] == pytest.approx(true.G1[C], abs=0.03)
    assert np.max(np.abs(k.kappa[:, C, :3] - true.kappa[:, C, :3])) < 0.05
    assert k.kappa[C, C, 0] < k.kappa[NC, C, 0] < 0


def test_json_round_trip():
    k = random_kernel(4)
    d = json.loads(json.dumps(k.to_dict()))
    assert set(d["kappa"]) == {"NC_C", "C_C"}
    back = hdim.InfluenceKernel.from_dict(d)
    assert np.array_equal(back.kappa, k.kappa) and np.array_equal(back.G1, k.G1)
    emb = hdim.embed_tim_as_hdim(tim.TimKernel("TIM2", np.ones((2, 3))))
    back = hdim.InfluenceKernel.from_dict(json.loads(json.dumps(emb.to_dict())))
    assert back.unconstrained and np.array_equal(back.kappa, emb.kappa)
