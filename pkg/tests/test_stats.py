import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propimpact import dar, stats, synth, tim
from propimpact._lagsum import batch_means_stderr, lagged_sums
from propimpact.errors import DegenerateTypeError, LagError, ValidationError

from conftest import series_from, series_with_types


def brute_pairs(series, lag):
    """All same-day index pairs (t, t + lag), enumerated one by one."""
    out = []
    for sl in series.days():
        for t in range(sl.start, sl.stop - lag):
            out.append((t, t + lag))
    return out


def brute_cond(series, a, b, lag):
    P = [np.mean(series.types == k) for k in (0, 1)]
    vals = [series.sign[s] * (series.types[s] == a) * series.sign[u] * (series.types[u] == b)
            for s, u in brute_pairs(series, lag)]
    return np.mean(vals) / (P[a] * P[b])


def brute_pi(series, a, b, lag):
    P = [np.mean(series.types == k) for k in (0, 1)]
    vals = [(series.types[s] == a) * (series.types[u] == b) for s, u in brute_pairs(series, lag)]
    return np.mean(vals) / (P[a] * P[b]) - 1


def brute_pair_resp(series, a, b, lag):
    P = [np.mean(series.types == k) for k in (0, 1)]
    vals = [(series.types[s] == a) * series.sign[s] * (series.types[u] == b) * series.returns[u]
            for s, u in brute_pairs(series, lag)]
    return np.mean(vals) / (P[a] * P[b])


HAND = dict(signs=[1, -1, -1, 1, 1, -1, 1, 1], types=[0, 1, 0, 1, 1, 0, 0, 1])


@pytest.fixture
def hand():
    return series_with_types(HAND["signs"], HAND["types"], bounds=[0, 5, 8])


def test_alternating_signs():
    s = series_from(np.resize([1, -1], 40), np.zeros(40))
    C = stats.sign_autocorrelation(s, 10)
    assert np.array_equal(C, (-1.0) ** np.arange(11))


def test_iid_signs_clt():
    rng = np.random.default_rng(0)
    n = 1_000_000
    s = series_from(rng.choice([-1, 1], n), np.zeros(n), bounds=np.arange(0, n + 1, 20_000))
    C = stats.sign_autocorrelation(s, 10)
    assert abs(C[10]) < 4 / math.sqrt(n)


def test_dar1_geometric_correlation():
    n = 1_000_000
    eps = dar.simulate(dar.DarSpec.order_one(0.75), n, seed=3)
    s = series_from(eps, np.zeros(n), bounds=np.arange(0, n + 1, 10_000))
    C, se = stats.sign_autocorrelation(s, 8, with_stderr=True)
    lags = np.arange(1, 9)
    assert np.all(np.abs(C[lags] - 0.5 ** lags) < 5 * se[lags])


def test_conditional_correlation_hand_enumeration(hand):
    cc = stats.conditional_sign_correlation(hand, 3)
    pi = stats.occurrence_correlation(hand, 3)
    for a in (0, 1):
        for b in (0, 1):
            for lag in (1, 2, 3):
                assert cc[a, b, lag] == pytest.approx(brute_cond(hand, a, b, lag), abs=1e-14)
                assert pi[a, b, lag] == pytest.approx(brute_pi(hand, a, b, lag), abs=1e-14)


def test_conditional_equal_time_convention(hand):
    cc = stats.conditional_sign_correlation(hand, 2)
    P = np.array([np.mean(hand.types == k) for k in (0, 1)])
    assert np.allclose(cc[:, :, 0], np.diag(1 / P))


def test_nc_then_same_sign_c():
    # every C event follows an NC event of the same sign at lag 1
    s = series_with_types([1, 1, -1, -1, 1, 1], [0, 1, 0, 1, 0, 1])
    cc = stats.conditional_sign_correlation(s, 1)
    joint = 3 / 5                       # pairs (NC, C) with equal signs out of 5 lag-1 pairs
    assert cc[0, 1, 1] == pytest.approx(joint / (0.5 * 0.5))


def test_independent_signs_and_types_clt():
    rng = np.random.default_rng(4)
    n = 1_000_000
    s = series_with_types(rng.choice([-1, 1], n), rng.random(n) < 0.4,
                          bounds=np.arange(0, n + 1, 20_000))
    cc = stats.conditional_sign_correlation(s, 5)
    pi = stats.occurrence_correlation(s, 5)
    P = np.array([0.6, 0.4])
    for a in (0, 1):
        for b in (0, 1):
            bound = 4 / math.sqrt(n * P[a] * P[b])
            assert np.all(np.abs(cc[a, b, 1:]) < bound)
            assert np.all(np.abs(pi[a, b, 1:]) < bound)


def test_alternating_types_occurrence():
    s = series_with_types(np.ones(20, int), np.resize([0, 1], 20))
    pi = stats.occurrence_correlation(s, 2)
    assert pi[1, 1, 1] == -1.0
    assert pi[1, 1, 2] == pytest.approx(1.0)
    assert np.all(pi >= -1)


def test_degenerate_type_named():
    s = series_with_types([1, -1, 1], [0, 0, 0])
    with pytest.raises(DegenerateTypeError, match="C"):
        stats.conditional_sign_correlation(s, 1)
    with pytest.raises(DegenerateTypeError):
        stats.correlations(series_with_types([1, -1, 1, 1], [0, 1, 0, 0]), 1, min_count=100)


def test_lag_longer_than_day():
    s = series_from([1, -1, 1], np.zeros(3))
    with pytest.raises(LagError):
        stats.sign_autocorrelation(s, 3)


def test_day_boundaries_break_pairs():
    # two days of constant sign but opposite across the boundary
    s = series_from([1] * 6 + [-1] * 6, np.zeros(12), bounds=[0, 6, 12])
    C = stats.sign_autocorrelation(s, 5)
    assert np.all(C == 1.0)


def test_decompositions_exact(small_tick_series):
    corr = stats.correlations(small_tick_series, 50)
    resp = stats.response(small_tick_series, 50, 50)
    P = corr.probs
    assert np.max(np.abs(np.einsum("a,b,abl->l", P, P, corr.C_cond)[1:] - corr.C[1:])) < 1e-12
    assert np.max(np.abs(P @ resp.S_cond - resp.S)) < 1e-12
    assert np.max(np.abs(P @ resp.R_cond - resp.R)) < 1e-12
    pair = np.einsum("a,b,abl->l", P, P, resp.S_pair)
    assert np.max(np.abs(pair[1:] - resp.s_at(np.arange(1, 51)))) < 1e-12


def test_cumulation_identities(small_tick_series):
    resp = stats.response(small_tick_series, 30, 20, pair=False, signature=False)
    assert resp.r_at(0) == 0
    for l in range(1, 31):
        assert resp.r_at(l) == pytest.approx(resp.s_at(np.arange(l)).sum(), abs=1e-12)
    for l in range(1, 21):
        assert resp.r_at(-l) == pytest.approx(-resp.s_at(-np.arange(1, l + 1)).sum(), abs=1e-12)


def test_response_with_sign_returns():
    rng = np.random.default_rng(2)
    eps = rng.choice([-1, 1], 5000)
    s = series_from(eps, eps.astype(float))
    resp = stats.response(s, 5, 5, pair=False, signature=False)
    C = stats.sign_autocorrelation(s, 5)
    assert resp.s_at(0) == 1.0
    assert np.allclose(resp.s_at(np.arange(1, 6)), C[1:], atol=1e-15)
    assert np.allclose(resp.s_at(-np.arange(1, 6)), C[1:], atol=1e-15)


def test_independent_noise_response():
    rng = np.random.default_rng(5)
    n = 1_000_000
    s = series_from(rng.choice([-1, 1], n), rng.standard_normal(n),
                    bounds=np.arange(0, n + 1, 20_000))
    resp = stats.response(s, 10, 10, pair=False, signature=False)
    assert np.all(np.abs(resp.S) < 4 * resp.sigma_trade / math.sqrt(n))


def test_tim1_generated_response_matches_forward_sum():
    kernel = tim.TimKernel.from_propagator("TIM1", np.arange(1, 22, dtype=float) ** -0.4)
    spec = synth.GeneratorSpec(dar.DarSpec.power_law(0.5, 0.9, 100), synth.TypeProcess(),
                               kernel, tim.NoiseParams(0.5, 0.0), 500_000, 8)
    s = synth.generate(spec)
    C = stats.sign_autocorrelation(s, 60)
    L = kernel.L
    sums, counts = lagged_sums(s.sign.astype(float), s.returns, s.bounds, 20)
    S_se = batch_means_stderr(sums / counts)
    resp = stats.response(s, 20, 0, pair=False, signature=False)
    for l in range(21):
        model = sum(kernel.dG[0, n] * C[abs(n - l)] for n in range(L + 1))
        assert abs(resp.s_at(l) - model) < 3 * S_se[l]


def test_pair_response_hand_and_zero(hand):
    sp = stats.pair_response(hand, 2)
    for a in (0, 1):
        for b in (0, 1):
            for lag in (1, 2):
                assert sp[a, b, lag] == pytest.approx(brute_pair_resp(hand, a, b, lag), abs=1e-14)
    flat = series_from(HAND["signs"], np.zeros(8))
    flat_typed = flat.select_days([0])
    with pytest.raises(DegenerateTypeError):
        stats.pair_response(flat_typed, 2)


def test_pair_response_zero_returns():
    rng = np.random.default_rng(9)
    from propimpact.events import EventSeries
    n = 200
    is_c = rng.random(n) < 0.5
    s = EventSeries(np.arange(n), rng.choice([-1, 1], n), np.zeros(n), np.zeros(n),
                    np.array([0, n]), is_c=is_c, labels="generator")
    assert np.all(stats.pair_response(s, 5) == 0)


def test_signature_plot_random_walk():
    rng = np.random.default_rng(6)
    n = 400_000
    s = series_from(rng.choice([-1, 1], n), rng.standard_normal(n),
                    bounds=np.arange(0, n + 1, 20_000))
    D, se = stats.signature_plot(s, 50, with_stderr=True)
    assert np.all(np.abs(D - 1) < 4 * se)
    assert D[0] == pytest.approx(np.mean(s.returns ** 2), rel=1e-12)


def test_signature_plot_alternating_mid():
    r = np.resize([1.0, -1.0], 1000)
    s = series_from(np.ones(1000, int), r)
    D = stats.signature_plot(s, 6)
    lags = np.arange(1, 7)
    assert np.allclose(D, np.where(lags % 2 == 1, 1.0 / lags, 0.0))
    assert np.all(D >= 0)


def test_signature_large_tick_matches_constant_formula(large_tick_series):
    s = large_tick_series
    lags = np.array([1, 10, 100])
    corr = stats.correlations(s, 100)
    D, se = stats.signature_plot(s, 100, with_stderr=True)
    k = synth.constant_tim2(0.0, 1.0)
    model = tim.signature_tim2(k, corr, tim.NoiseParams(), lags, fast=True)
    assert np.all(np.abs(D[lags - 1] - model) < 3 * se[lags - 1])


def test_three_point_hand_and_validation(hand):
    c3 = stats.three_point_correlation(hand, 2, 1)
    P = [np.mean(hand.types == k) for k in (0, 1)]
    x = hand.sign * 1.0
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                vals = []
                for sl in hand.days():
                    for t in range(sl.start + 2, sl.stop):
                        vals.append(x[t - 2] * (hand.types[t - 2] == a) * x[t - 1]
                                    * (hand.types[t - 1] == b) * (hand.types[t] == c))
                expect = np.mean(vals) / (P[a] * P[b] * P[c])
                assert c3[a, b, c] == pytest.approx(expect, abs=1e-14)
    with pytest.raises(ValidationError):
        stats.three_point_correlation(hand, 1, 1)


def test_three_point_independent():
    rng = np.random.default_rng(10)
    n = 400_000
    s = series_with_types(rng.choice([-1, 1], n), rng.random(n) < 0.5,
                          bounds=np.arange(0, n + 1, 20_000))
    c3 = stats.three_point_correlation(s, 3, 1)
    assert np.all(np.abs(c3) < 4 / math.sqrt(n * 0.125))


def test_factorization_residual_reported(small_tick_series):
    corr = stats.correlations(small_tick_series, 20)
    out = stats.factorization_residual(small_tick_series, corr, lags=(1, 3))
    assert np.isfinite(out["max_abs"]) and len(out["entries"]) == 8


def test_deviation_ratio():
    resp = stats.ResponseSet(2, 2, np.array([-0.6, -0.5, 0, 0.1, 0.2]), np.zeros(5),
                             np.zeros((2, 5)), np.zeros((2, 5)), 0.1, np.array([0.5, 0.5]))
    assert stats.deviation_ratio(resp, [-0.7], [1])[0] == pytest.approx(2.0)
    assert np.all(stats.deviation_ratio(resp, resp.r_at(-np.array([1, 2])), [1, 2]) == 0)
    zero = stats.ResponseSet(1, 1, np.zeros(3), np.zeros(3), np.zeros((2, 3)), np.zeros((2, 3)),
                             0.0, np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        stats.deviation_ratio(zero, [0.0], [1])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_global_sign_flip_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 300
    eps = rng.choice([-1, 1], n)
    types = rng.random(n) < 0.5
    r = np.where(types, rng.standard_normal(n), 0.0)
    a = series_from(eps, r, bounds=[0, 150, 300])
    b = series_from(-eps, -r, bounds=[0, 150, 300])
    ca, cb = stats.correlations(a, 5), stats.correlations(b, 5)
    ra, rb = stats.response(a, 5, 5), stats.response(b, 5, 5)
    assert np.allclose(ca.C_cond, cb.C_cond, atol=1e-12)
    assert np.allclose(ra.S, rb.S, atol=1e-12)
    assert np.allclose(ra.S_pair, rb.S_pair, atol=1e-12)
    assert np.allclose(ra.D, rb.D, atol=1e-12)


def test_json_and_csv_export(tmp_path, small_tick_series):
    corr = stats.correlations(small_tick_series, 10)
    resp = stats.response(small_tick_series, 10, 10)
    d = stats.to_dict(corr, resp, instrument="X")
    assert set(d["C_cond"]) == {"NC_NC", "NC_C", "C_NC", "C_C"}
    path = stats.write_json(d, tmp_path / "r.json")
    back = json.loads(path.read_text())
    c2 = stats.correlation_from_dict(back)
    r2 = stats.response_from_dict(back)
    assert np.array_equal(c2.C_cond, corr.C_cond) and np.array_equal(c2.Pi, corr.Pi)
    assert np.array_equal(r2.S_pair, resp.S_pair) and np.array_equal(r2.R, resp.R)
    header, rows = stats.response_rows(resp)
    out = stats.write_csv(rows, header, tmp_path / "r.csv", provenance="test")
    lines = out.read_text().splitlines()
    assert lines[0] == "# test" and lines[1].startswith("lag,R")
    assert len(lines) == 2 + 21
