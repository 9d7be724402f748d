"""Round-trip and oracle checks shared by the ``roundtrip`` command and the test suite.

Each check generates synthetic data from a known model, runs the estimation
and calibration chain, and compares against the generator's truth or an
independent closed form. Results are plain data so they can be printed,
serialised or asserted on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import dar, hdim, noisefit, stats, synth, tim
from .hdim import InfluenceKernel
from .tim import NoiseParams, TimKernel

DAR_FLOW = dict(gamma=0.5, rho=0.95)


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {shown} ({self.seconds:.1f}s)"

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "seconds": self.seconds,
                "metrics": {k: _jsonable(v) for k, v in self.metrics.items()}}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def relative_rms(est, truth):
    """sqrt(mean(((est - truth) / truth)^2))."""
    est, truth = np.asarray(est, float), np.asarray(truth, float)
    return float(np.sqrt(np.mean(((est - truth) / truth) ** 2)))


def relative_norm_error(est, truth):
    """||est - truth||_2 / ||truth||_2, for kernels that cross zero."""
    est, truth = np.asarray(est, float), np.asarray(truth, float)
    return float(np.linalg.norm(est - truth) / np.linalg.norm(truth))


def power_law_fit(lags, values):
    """Exponent b of values ~ a * lags^(-b) by least squares in log-log space."""
    slope = np.polyfit(np.log(lags), np.log(values), 1)[0]
    return float(-slope)


def dar_flow(p_max=10_000):
    return dar.DarSpec.power_law(DAR_FLOW["gamma"], DAR_FLOW["rho"], p_max)


def tim1_power_kernel(L=100, exponent=0.3) -> TimKernel:
    """G(l) = l^(-exponent) for l = 1..L+1."""
    return TimKernel.from_propagator("TIM1", np.arange(1, L + 2, dtype=float) ** -exponent)


def tim1_spec(n, seed, noise=NoiseParams(0.5, 0.4), L=100):
    return synth.GeneratorSpec(dar_flow(), synth.TypeProcess("iid", 0.5), tim1_power_kernel(L),
                               noise, n, seed, name="tim1-power")


@_timed
def tim1_roundtrip(n=1_000_000, seed=11, L=100, compare=50) -> CheckResult:
    """Generate TIM1 data with G(l) = l^-0.3, calibrate, compare G over l <= ``compare``."""
    spec = tim1_spec(n, seed, L=L)
    series = synth.generate(spec)
    corr = stats.correlations(series, L, conditional=False)
    resp = stats.response(series, L, 0, pair=False, signature=False)
    k = tim.calibrate_tim1(corr, resp, L)
    err = relative_rms(k.G[0, :compare], spec.impact.G[0, :compare])
    return CheckResult("1 TIM1 round-trip", err < 0.05,
                       {"relative_rms_G": err, "tolerance": 0.05, "n": n})


def _r_cond_checks(resp, R_cond_model, L_neg, lags):
    z = {}
    for a, name in ((0, "NC"), (1, "C")):
        for l in lags:
            i = resp.idx(-l)
            z[f"z_{name}({-l})"] = float((resp.R_cond[a, i] - R_cond_model[a, L_neg - l])
                                         / resp.R_cond_se[a, i])
    return z


@_timed
def tim2_large_tick(n=1_000_000, seed=7, L=50, lags=(1, 10, 100)) -> CheckResult:
    """Large-tick preset: constant G_C, zero G_NC, negative-lag conditional responses."""
    spec = synth.preset("large-tick", n, seed)
    series = synth.generate(spec)
    L_corr = max(L + max(lags), L)
    corr = stats.correlations(series, L_corr, min_count=100)
    resp = stats.response(series, L, max(lags), pair=False, signature=False, min_count=100)
    k = tim.calibrate_tim2(corr, resp, L)
    g_c = spec.impact.dG[1, 0]
    dev_c = float(np.max(np.abs(k.G[1] / g_c - 1)))
    dev_nc = float(np.max(np.abs(k.G[0])) / abs(g_c))
    _, _, R_cond = tim.predict_response_tim(k, corr, 0, max(lags))
    z = _r_cond_checks(resp, R_cond, max(lags), lags)
    worst = max(abs(v) for v in z.values())
    ok = dev_c < 0.05 and dev_nc < 0.05 and worst < 3
    return CheckResult("2 TIM2 large-tick round-trip", ok,
                       {"max_rel_dev_G_C": dev_c, "max_abs_G_NC_over_G_C": dev_nc,
                        "max_abs_z_R_cond": worst, "P_C": float(series.is_c.mean()), **z})


def hdim2_test_kernel(L=50) -> InfluenceKernel:
    """Mixed-sign influence kernels with clearly resolvable magnitudes."""
    n = np.arange(1, L + 1, dtype=float)
    kappa = np.zeros((2, 2, L))
    kappa[0, 1] = 0.25 * n ** -0.7
    kappa[1, 1] = -0.4 * n ** -0.5
    return InfluenceKernel(kappa, np.array([0.0, 1.0]))


@_timed
def hdim2_roundtrip(n=1_000_000, seed=3, L=50, compare=20, with_factorization=True) -> CheckResult:
    """HDIM2 data with types independent of signs; factorised calibration recovers kappa."""
    kernel = hdim2_test_kernel(L)
    spec = synth.GeneratorSpec(dar_flow(), synth.TypeProcess("iid", 0.6), kernel,
                               NoiseParams(D_LF=0.2), n, seed, name="hdim2-mixed")
    series = synth.generate(spec)
    corr = stats.correlations(series, L, min_count=100)
    resp = stats.response(series, L, 0, signature=False, min_count=100)
    fres = None
    if with_factorization:
        fres = stats.factorization_residual(series, corr)["max_abs"]
    k = hdim.calibrate_hdim2(corr, resp, L, factorization_residual=fres)
    err = {name: relative_norm_error(k.kappa[a, 1, :compare], kernel.kappa[a, 1, :compare])
           for a, name in ((0, "NC_C"), (1, "C_C"))}
    worst = max(err.values())
    return CheckResult("3 HDIM2 round-trip", worst < 0.10,
                       {"rel_rms_kappa_NC_C": err["NC_C"], "rel_rms_kappa_C_C": err["C_C"],
                        "G_C": float(k.G1[1]), "factorization_residual": fres})


def iid_type_correlations(C, probs):
    """Conditional family implied by types drawn independently of the signs."""
    L = len(C) - 1
    probs = np.asarray(probs, float)
    C_cond = np.broadcast_to(C, (2, 2, L + 1)).copy()
    C_cond[:, :, 0] = np.diag(1.0 / probs)
    return stats.CorrelationSet(L, np.asarray(C, float), probs, C_cond, np.zeros((2, 2, L + 1)))


def hdim1_returns(spec: dar.DarSpec, eps, G1):
    """r_t = G1 (eps_t - E[eps_t | past]) with the DAR conditional predictor."""
    e = eps.astype(float)
    pred = (2 * spec.rho - 1) * signal.fftconvolve(e, np.concatenate([[0.0], spec.lam]))[: len(e)]
    return G1 * (e - pred)


@_timed
def equivalence(n=1_000_000, seed=4, L=30, compare=20) -> CheckResult:
    """(a) embedded TIM predictions are identical; (b) DAR data gives the mapped kernel."""
    rng = np.random.default_rng(seed)
    spec = dar.DarSpec.power_law(0.5, 0.9, 20)
    C = dar.yule_walker_forward(spec, 400)
    corr = iid_type_correlations(C, (0.35, 0.65))
    k2 = TimKernel("TIM2", rng.normal(scale=0.3, size=(2, L + 1)))
    _, R_t, Rc_t = tim.predict_response_tim(k2, corr, 100, 100)
    _, R_h, Rc_h = hdim.predict_response_hdim2(hdim.embed_tim_as_hdim(k2), corr, 100, 100)
    gap_a = float(max(np.max(np.abs(R_t - R_h)), np.max(np.abs(Rc_t - Rc_h))))

    G1 = 1.0
    eps = dar.simulate(spec, n + spec.p, rng=synth.substream(seed, "signs"))
    r = hdim1_returns(spec, eps, G1)[spec.p:]
    series = synth.build_series(r, eps[spec.p:], np.abs(r) > 1e-9, "hdim1-dar")
    ecorr = stats.correlations(series, L, conditional=False)
    resp = stats.response(series, L, 0, pair=False, signature=False)
    k1 = tim.calibrate_tim1(ecorr, resp, L)
    mapped = dar.hdim1_kernel_map(spec, G1)[:compare]
    err_b = relative_norm_error(k1.dG[0, 1:compare + 1], mapped)
    return CheckResult("4 TIM/HDIM equivalence", gap_a < 1e-10 and err_b < 0.10,
                       {"max_abs_gap_embedding": gap_a, "rel_rms_mapped_kernel": err_b})


@_timed
def exponent_relation(n=10_000_000, seed=5, L=500, fit=(10, 500), p_max=10_000) -> CheckResult:
    """Power-law DAR flow with the efficient history dependent returns; fit G(l) ~ l^-beta."""
    spec = dar.DarSpec.power_law(DAR_FLOW["gamma"], DAR_FLOW["rho"], p_max)
    G1 = 1.0
    eps = dar.simulate(spec, n + spec.p, rng=synth.substream(seed, "signs"))
    r = hdim1_returns(spec, eps, G1)[spec.p:]
    series = synth.build_series(r, eps[spec.p:], np.abs(r) > 1e-9, "hdim1-power")
    corr = stats.correlations(series, L, conditional=False)
    resp = stats.response(series, L, 0, pair=False, signature=False)
    k = tim.calibrate_tim1(corr, resp, L)
    lags = np.arange(fit[0], fit[1] + 1)
    G = k.propagator(lags)[0]
    if np.any(G <= 0):
        beta = float("nan")
    else:
        beta = power_law_fit(lags, G)
    beta_exact = power_law_fit(lags, dar.implied_propagator(spec, G1, fit[1]+1)[lags - 1])
    gamma_fit = power_law_fit(lags, corr.C[lags])
    return CheckResult("5 exponent relation", bool(0.15 <= beta <= 0.35),
                       {"beta_fit": beta, "beta_exact_kernel": beta_exact, "gamma_fit": gamma_fit,
                        "target": (1 - DAR_FLOW["gamma"]) / 2, "window": [0.15, 0.35]})


def _z(emp, se, model):
    return float((emp - model) / se)


@_timed
def diffusion(n=1_000_000, seed=6, lags=(1, 10, 100)) -> CheckResult:
    """Signature-plot formulas against the empirical D(l) of their own generators."""
    lags = np.asarray(lags)
    l_max = int(lags.max())
    m = {}

    # one propagator
    spec1 = tim1_spec(n, seed)
    s1 = synth.generate(spec1)
    L1 = spec1.impact.L
    c1 = stats.correlations(s1, l_max + L1, conditional=False)
    D1, se1 = stats.signature_plot(s1, l_max, with_stderr=True)
    th1 = tim.signature_tim1(spec1.impact, c1, spec1.noise, lags)
    z1 = [_z(D1[l - 1], se1[l - 1], t) for l, t in zip(lags, th1)]

    # two propagators, decaying kernels, Markov types
    L2 = 50
    nn = np.arange(L2 + 1, dtype=float)
    dG = np.zeros((2, L2 + 1))
    dG[0] = 0.3 * np.where(nn == 0, 1.0, -0.2 * np.maximum(nn, 1) ** -1.2)
    dG[1] = 1.0 * np.where(nn == 0, 1.0, -0.1 * np.maximum(nn, 1) ** -0.8)
    spec2 = synth.GeneratorSpec(dar_flow(), synth.TypeProcess.markov_with(0.3, 0.1),
                                TimKernel("TIM2", dG), NoiseParams(0.2, 0.3), n, seed + 1,
                                name="tim2-decay")
    s2 = synth.generate(spec2)
    c2 = stats.correlations(s2, l_max + L2, min_count=100) if s2.labels == "generator" else None
    if c2 is None:
        raise RuntimeError("TIM2 diffusion check expects generator labels")
    D2, se2 = stats.signature_plot(s2, l_max, with_stderr=True)
    th2 = tim.signature_tim2(spec2.impact, c2, spec2.noise, lags)
    z2 = [_z(D2[l - 1], se2[l - 1], t) for l, t in zip(lags, th2)]

    # history dependent model, noise on C events only (white part)
    spec3 = synth.preset("small-tick", n, seed + 2)
    s3 = synth.generate(spec3)
    L3 = spec3.impact.L
    c3 = stats.correlations(s3, l_max + L3, min_count=100)
    D3, se3 = stats.signature_plot(s3, l_max, with_stderr=True)
    th3 = hdim.signature_hdim2(spec3.impact, c3, spec3.noise, lags)
    z3 = [_z(D3[l - 1], se3[l - 1], t) for l, t in zip(lags, th3)]
    fbias = stats.factorization_residual(s3, c3)["max_abs"]

    # constant kernels: short formula against the full sums
    kc = synth.constant_tim2(0.2, 1.0, L=5)
    fast = tim.signature_tim2(kc, c2, NoiseParams(0.1, 0.2), lags, fast=True)
    full = tim.signature_tim2(kc, c2, NoiseParams(0.1, 0.2), lags, fast=False)
    gap = float(np.max(np.abs(fast - full)))

    m.update({"z_TIM1": z1, "z_TIM2": z2, "z_HDIM2": z3, "hdim2_factorization_bias": fbias,
              "constant_kernel_gap": gap})
    worst = max(abs(v) for v in z1 + z2 + z3)
    return CheckResult("6 diffusion formulas", worst < 3 and gap < 1e-10, m)


@_timed
def identities(seed=8, n=40_000) -> CheckResult:
    """Exact on-sample identities and algebraic round-trips."""
    spec = synth.GeneratorSpec(dar.DarSpec.power_law(0.5, 0.9, 200),
                               synth.TypeProcess.markov_with(0.4, 0.2),
                               hdim.embed_tim_as_hdim(tim1_power_kernel(20)),
                               NoiseParams(0.3, 0.0), n, seed, name="identities")
    series = synth.generate_hdim2(spec)
    L = 60
    corr = stats.correlations(series, L)
    resp = stats.response(series, L, L)
    S_pos = resp.S[L:]
    S_neg = resp.S[:L][::-1]
    cum = max(np.max(np.abs(resp.R[L + 1:] - np.cumsum(S_pos)[:-1])),
              np.max(np.abs(resp.R[:L][::-1] + np.cumsum(S_neg))))
    Cdec = np.einsum("a,b,abl->l", corr.probs, corr.probs, corr.C_cond)
    dec_C = float(np.max(np.abs(Cdec[1:] - corr.C[1:])))
    dec_S = float(np.max(np.abs(corr.probs @ resp.S_cond - resp.S)))
    dec_R = float(np.max(np.abs(corr.probs @ resp.R_cond - resp.R)))
    pair = np.einsum("a,b,abl->l", corr.probs, corr.probs, resp.S_pair)
    dec_pair = float(np.max(np.abs(pair[1:] - resp.S[L + 1:])))

    yw = 0.0
    rng = np.random.default_rng(seed)
    for p in (1, 3, 8, 20):
        lam = rng.random(p) + 0.05
        s = dar.DarSpec(lam / lam.sum(), 0.6 + 0.35 * rng.random())
        back = dar.yule_walker_inverse(dar.yule_walker_forward(s, p))
        yw = max(yw, float(np.max(np.abs(back.lam - s.lam))), abs(back.rho - s.rho))

    lg = np.arange(1, 101)
    base = np.sin(lg) + 2.0
    fit = noisefit.fit_noise(base + 0.5 + 1.2 / lg, base, lg)
    nf = max(abs(fit.params.D_LF - 0.5), abs(fit.params.D_HF - 1.2))

    ok = cum < 1e-12 and dec_C < 1e-12 and dec_S < 1e-12 and dec_R < 1e-12 \
        and dec_pair < 1e-12 and yw < 1e-8 and nf < 1e-10
    return CheckResult("7 estimator identities", ok,
                       {"cumulation": float(cum), "C_decomposition": dec_C,
                        "S_decomposition": dec_S, "R_decomposition": dec_R,
                        "pair_decomposition": dec_pair, "yule_walker_roundtrip": yw,
                        "noise_fit_recovery": nf})


@_timed
def null_suite(n=1_000_000, seed=9, L=50, kernel_lags=(1, 10, 50),
               lags=(1, 10, 100)) -> CheckResult:
    """Everything independent: beyond the immediate impact, nothing may stand out.

    Bounds are the null standard deviations of each estimate: sqrt(E r^2 / N)
    per differential-kernel entry (divided by sqrt(P) per type), and
    sqrt(l / N) scaled by the kernel mass for cumulated predictions and
    deviation ratios.
    """
    series = synth.generate(synth.preset("iid-null", n, seed))
    lags = np.asarray(lags)
    l_max = int(lags.max())
    corr = stats.correlations(series, L + l_max, min_count=100)
    resp = stats.response(series, L, l_max, pair=False, signature=False, min_count=100)
    var_r = resp.sigma_trade ** 2
    sig = resp.sigma_trade
    kl = np.asarray(kernel_lags)
    z = {}

    k1 = tim.calibrate_tim1(corr, resp, L)
    z["kernel_TIM1"] = np.abs(k1.dG[0, kl]) / np.sqrt(var_r / n)
    k2 = tim.calibrate_tim2(corr, resp, L)
    z["kernel_TIM2"] = np.concatenate([np.abs(k2.dG[a, kl]) / np.sqrt(var_r / (n * corr.probs[a]))
                                       for a in (0, 1)])
    _, R1, _ = tim.predict_response_tim(k1, corr, 0, l_max)
    mass = float(np.sum(np.abs(k1.dG)))
    pred = R1[l_max - lags]
    z["prediction_TIM1"] = np.abs(pred) / (mass * np.sqrt(lags / n))
    ratio = stats.deviation_ratio(resp, pred, lags)
    z["deviation_ratio_TIM1"] = np.abs(ratio) / ((1 + mass / sig) * np.sqrt(lags / n))
    worst = max(float(np.max(v)) for v in z.values())
    return CheckResult("8 null suite", worst < 3,
                       {**{k: v for k, v in z.items()}, "max_ratio_to_bound": worst})


ACCEPTANCE = {
    1: tim1_roundtrip, 2: tim2_large_tick, 3: hdim2_roundtrip, 4: equivalence,
    5: exponent_relation, 6: diffusion, 7: identities, 8: null_suite,
}


def preset_roundtrip(preset_name, variant, n=1_000_000, seed=7, L=50, lags=(1, 10, 100)):
    """Generate a preset, calibrate ``variant`` and score predictions against the sample."""
    spec = synth.preset(preset_name, n, seed)
    series = synth.generate(spec)
    lags = np.asarray(lags)
    l_max = int(lags.max())
    t0 = time.perf_counter()
    corr = stats.correlations(series, L + l_max, min_count=100)
    resp = stats.response(series, L, l_max, signature=False, min_count=100)
    variant = variant.lower()
    if variant == "tim1":
        k = tim.calibrate_tim1(corr, resp, L)
        _, R, R_cond = tim.predict_response_tim(k, corr, 0, l_max)
    elif variant == "tim2":
        k = tim.calibrate_tim2(corr, resp, L)
        _, R, R_cond = tim.predict_response_tim(k, corr, 0, l_max)
    elif variant == "hdim2":
        k = hdim.calibrate_hdim2(corr, resp, L)
        _, R, R_cond = hdim.predict_response_hdim2(k, corr, 0, l_max)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    results = []
    z = {f"z_R({-l})": float((resp.r_at(-l) - R[l_max - l]) / resp.R_se[resp.idx(-l)])
         for l in lags}
    if R_cond is not None:
        z.update(_r_cond_checks(resp, R_cond, l_max, lags))
    worst = max(abs(v) for v in z.values())
    results.append(CheckResult(f"{preset_name}/{variant} negative-lag responses", worst < 3,
                               {"max_abs_z": worst, **z}, time.perf_counter() - t0))
    truth = spec.impact
    if variant == "tim2" and isinstance(truth, TimKernel) and truth.variant == "TIM2":
        Lc = min(L, truth.L)
        G_true = truth.propagator(np.arange(1, L + 2))
        dev_c = float(np.max(np.abs(k.G[1] - G_true[1])) / abs(G_true[1, 0]))
        dev_nc = float(np.max(np.abs(k.G[0] - G_true[0])) / abs(G_true[1, 0]))
        results.append(CheckResult(f"{preset_name}/{variant} kernel recovery",
                                   dev_c < 0.05 and dev_nc < 0.05,
                                   {"max_rel_dev_G_C": dev_c, "max_dev_G_NC": dev_nc, "L": Lc}))
    if variant == "hdim2" and isinstance(truth, InfluenceKernel):
        Lc = min(L, truth.L, 20)
        err = max(relative_norm_error(k.kappa[a, 1, :Lc], truth.kappa[a, 1, :Lc])
                  for a in (0, 1) if np.any(truth.kappa[a, 1, :Lc]))
        results.append(CheckResult(f"{preset_name}/{variant} kernel recovery", err < 0.10,
                                   {"rel_rms_kappa": err}))
    return results
