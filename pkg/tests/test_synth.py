import datetime as dt
import math

import numpy as np
import pytest

from propimpact import dar, hdim, stats, synth, tim
from propimpact.errors import ValidationError

N = synth.MIN_LENGTH * 2


def small_spec(impact, **kw):
    base = dict(sign=dar.DarSpec.power_law(0.5, 0.9, 50), types=synth.TypeProcess("iid", 0.4),
                impact=impact, n=N, seed=3)
    base.update(kw)
    return synth.GeneratorSpec(**base)


def test_determinism_and_seed_dependence():
    spec = synth.preset("small-tick", n=N, seed=7)
    a, b = synth.generate(spec), synth.generate(spec)
    assert a.same_as(b)
    c = synth.generate(spec.replace(seed=8))
    assert not np.array_equal(a.sign, c.sign)


def test_named_substreams_are_independent():
    x = synth.substream(1, "signs").random(5)
    assert np.array_equal(x, synth.substream(1, "signs").random(5))
    assert not np.array_equal(x, synth.substream(1, "types").random(5))


def test_transient_returns_match_explicit_sum():
    rng = np.random.default_rng(0)
    eps = rng.choice(np.array([-1, 1], np.int8), 300)
    is_c = rng.random(300) < 0.5
    dG = rng.normal(size=(2, 7))
    r = synth.tim_returns(tim.TimKernel("TIM2", dG), eps, is_c)
    for t in range(300):
        expect = sum(dG[int(is_c[t - n]), n] * eps[t - n] for n in range(7) if t - n >= 0)
        assert r[t] == pytest.approx(expect, abs=1e-12)


def test_history_dependent_returns_match_explicit_sum():
    rng = np.random.default_rng(1)
    eps = rng.choice(np.array([-1, 1], np.int8), 300)
    is_c = rng.random(300) < 0.6
    kernel = synth.small_tick_kernel(L=6)
    r = synth.hdim_returns(kernel, eps, is_c)
    for t in range(300):
        c = int(is_c[t])
        expect = kernel.G1[c] * eps[t] + sum(kernel.kappa[int(is_c[t - n]), c, n - 1] * eps[t - n]
                                             for n in range(1, 7) if t - n >= 0)
        assert r[t] == pytest.approx(expect, abs=1e-12)


def test_embedded_transient_kernel_generates_same_returns():
    rng = np.random.default_rng(2)
    eps = rng.choice(np.array([-1, 1], np.int8), 2000)
    is_c = rng.random(2000) < 0.3
    k2 = tim.TimKernel("TIM2", rng.normal(size=(2, 9)))
    assert np.max(np.abs(synth.tim_returns(k2, eps, is_c)
                         - synth.hdim_returns(hdim.embed_tim_as_hdim(k2), eps, is_c))) < 1e-12


def test_nc_events_do_not_move_price():
    for name in ("small-tick", "large-tick", "iid-null"):
        s = synth.generate(synth.preset(name, n=N, seed=1))
        assert np.all(s.returns[~s.is_c] == 0)
        assert np.all(s.returns[s.is_c] != 0)
        assert s.labels == "returns"


def test_preset_type_frequencies():
    n = 400_000
    iid = synth.generate(synth.preset("iid-null", n=n, seed=2))
    assert abs(iid.is_c.mean() - 0.5) < 4 * 0.5 / math.sqrt(n)
    small = synth.generate(synth.preset("small-tick", n=n, seed=2))
    assert abs(small.is_c.mean() - 0.7) < 4 * math.sqrt(0.21 / n)
    large = synth.generate(synth.preset("large-tick", n=n, seed=2))
    c = large.is_c
    assert abs(c.mean() - 0.08) < 0.005
    assert abs(np.mean(c[1:][c[:-1]]) - 0.02) < 0.01


def test_reversal_after_c_events():
    spec = small_spec(synth.constant_tim2(0.0, 1.0), reversal=1.0)
    s = synth.generate(spec)
    after = np.flatnonzero(s.is_c[:-1])
    assert np.all(s.sign[after + 1] == -s.sign[after])


def test_unknown_preset():
    with pytest.raises(ValidationError, match="small-tick"):
        synth.preset("mid-tick")


def test_noise_only_signature():
    zero = tim.TimKernel("TIM1", np.zeros((1, 3)))
    noise = tim.NoiseParams(0.4, 0.6)
    s = synth.generate(small_spec(zero, noise=noise, n=400_000))
    assert s.labels == "generator"
    D, se = stats.signature_plot(s, 20, with_stderr=True)
    lags = np.arange(1, 21)
    assert np.all(np.abs(D - (0.4 + 0.6 / lags)) < 4 * se)


def test_hdim_noise_is_white_per_event():
    kernel = hdim.InfluenceKernel(np.zeros((2, 2, 2)), np.array([0.0, 0.0]))
    s = synth.generate(small_spec(kernel, noise=tim.NoiseParams(0.5, 0.0), n=400_000))
    D, se = stats.signature_plot(s, 10, with_stderr=True)
    assert np.all(np.abs(D - 0.5) < 4 * se)


def test_timestamps_and_days():
    s = synth.generate(small_spec(synth.constant_tim2(0.0, 1.0), events_per_day=5000))
    first = dt.datetime.fromtimestamp(s.ts[0] / 1e9, tz=dt.timezone.utc)
    assert first == dt.datetime(2024, 1, 2, 9, 30, tzinfo=dt.timezone.utc)
    assert np.all(s.day_lengths == 5000)
    assert s.mid_before[0] == synth.START_MID
    assert np.allclose(s.mid_after - s.mid_before, s.returns)


def test_external_signs():
    spec = small_spec(synth.constant_tim2(0.0, 1.0, L=5))
    assert spec.warmup == 5
    with pytest.raises(ValidationError):
        synth.generate(spec.replace(signs=np.ones(N, np.int8)))
    signs = np.resize(np.array([1, -1], np.int8), N + spec.warmup)
    s = synth.generate(spec.replace(signs=signs))
    assert np.array_equal(s.sign, signs[spec.warmup:])


def test_spec_validation():
    k = synth.constant_tim2(0.0, 1.0)
    with pytest.raises(ValidationError):
        small_spec(k, n=100)
    with pytest.raises(ValidationError):
        small_spec(k, reversal=1.5)
    with pytest.raises(ValidationError):
        small_spec(k, events_per_day=0)
    with pytest.raises(ValidationError):
        small_spec("kernel")
    with pytest.raises(ValidationError):
        synth.TypeProcess("markov", transition=[[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ValidationError):
        synth.TypeProcess("iid", 1.0)
    script = synth.TypeProcess("scripted", script=np.zeros(10, int))
    with pytest.raises(ValidationError):
        synth.generate(small_spec(k, types=script))


def test_scripted_types_are_kept():
    script = np.resize([0, 1, 1], N)
    s = synth.generate(small_spec(synth.constant_tim2(0.0, 1.0),
                                  types=synth.TypeProcess("scripted", script=script)))
    assert np.array_equal(s.is_c, script.astype(bool))


def test_spec_dict_round_trip():
    spec = synth.preset("large-tick", n=N, seed=4)
    back = synth.GeneratorSpec.from_dict(spec.to_dict())
    assert synth.generate(back).same_as(synth.generate(spec))
    d = {"sign": {"power_law": {"gamma": 0.5, "rho": 0.9, "p_max": 100}},
         "impact": {"model": "hdim", **synth.small_tick_kernel(5).to_dict()}, "n": N}
    spec = synth.GeneratorSpec.from_dict(d)
    assert spec.sign.p == 100 and spec.impact.L == 5
