"""Command line entry point: ``propimpact <command> [options]``.

Commands mirror the library modules (ingest, stats, tim, hdim, dar, synth)
plus ``pipeline`` for the full report bundle and ``roundtrip`` for the
synthetic acceptance checks. Options can also come from a JSON config file
(``--config``); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dar, hdim, noisefit, stats, synth, tim, validation
from .errors import PropImpactError, ValidationError
from .events import DEFAULT_SESSION, ingest_tape, write_tape

log = logging.getLogger("propimpact")

OUT_ENV = "PROPIMPACT_OUT"
VARIANTS = ("tim1", "tim2", "hdim2")
DEFAULTS = {
    "session": "09:30-15:30", "tick_size": None, "L": 100, "max_lag": 1000, "sig_lag": 1000,
    "variant": "tim2", "n": 1_000_000, "seed": 0, "min_count": 100, "fit_on_ld": False,
    "workers": 4, "out": None, "preset": None, "tape": None,
}


# ----------------------------------------------------------------- helpers

# options that say where or how verbosely to run, not what to compute
UNHASHED = ("out", "func", "config", "verbose", "workers", "n_given", "seed_given")


def config_hash(cfg: dict) -> str:
    cfg = {k: v for k, v in cfg.items() if k not in UNHASHED}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def provenance(cfg: dict) -> str:
    return f"propimpact {__version__} config={config_hash(cfg)}"


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{path}: no such file")
    return json.loads(path.read_text())


def _write_json(obj, path):
    return stats.write_json(obj, path)


def _lag_list(text):
    """'1,2,5' or '1:100' (inclusive) into an int array."""
    if ":" in text:
        a, b = (int(x) for x in text.split(":"))
        return np.arange(a, b + 1)
    return np.array([int(x) for x in text.split(",")])


def _noise(text):
    if text is None:
        return tim.NoiseParams()
    lf, hf = (float(x) for x in text.split(","))
    return tim.NoiseParams(lf, hf)


def _load_kernel(path):
    d = _read_json(path)
    if "variant" in d:
        return tim.TimKernel.from_dict(d)
    return hdim.InfluenceKernel.from_dict(d)


def _out_root(value):
    root = value or os.environ.get(OUT_ENV) or "out"
    return Path(root)


def _read_signs(path):
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0] != ["sign"]:
        raise ValidationError(f"{path}: expected a 'sign' header")
    return np.array([int(r[0]) for r in rows[1:]], dtype=np.int8)


# ----------------------------------------------------------------- commands

def cmd_ingest(args):
    series = ingest_tape(args.tape, args.session, args.tick_size)
    summary = {"instrument": series.instrument_id, "events": len(series), "days": series.n_days,
               "P_C": float(series.is_c.mean())}
    if args.out:
        write_tape(series, args.out)
        summary["written"] = str(args.out)
    print(json.dumps(summary))


def cmd_stats(args):
    series = ingest_tape(args.tape, args.session, args.tick_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = vars(args)
    corr, resp = _estimate(series, args.max_lag, args.max_lag, args.L, pair=True,
                           min_count=args.min_count, signature=True)
    _write_estimates(series, corr, resp, out, provenance(cfg))
    print(json.dumps({"out": str(out), "L": corr.L}))


def _estimate(series, L_corr, L_neg, L_pos, pair, min_count, signature=False):
    both = min(len(series) - int(series.is_c.sum()), int(series.is_c.sum())) >= min_count
    corr = stats.correlations(series, L_corr, conditional=both, min_count=min_count)
    resp = stats.response(series, L_pos, L_neg, pair=pair and both, signature=signature,
                          min_count=min_count)
    return corr, resp


def _write_estimates(series, corr, resp, out, prov):
    _write_json(stats.to_dict(corr, instrument=series.instrument_id), out / "correlations.json")
    _write_json(stats.to_dict(corr, resp, instrument=series.instrument_id), out / "responses.json")
    header, rows = stats.correlation_rows(corr)
    stats.write_csv(rows, header, out / "correlations.csv", prov)
    header, rows = stats.response_rows(resp)
    stats.write_csv(rows, header, out / "responses.csv", prov)


def _calibrate(variant, corr, resp, L):
    if variant == "tim1":
        return tim.calibrate_tim1(corr, resp, L)
    if variant == "tim2":
        return tim.calibrate_tim2(corr, resp, L)
    if variant == "hdim2":
        return hdim.calibrate_hdim2(corr, resp, L)
    raise ValidationError(f"variant must be one of {VARIANTS}")


def _predict(kernel, corr, L_pos, L_neg):
    if isinstance(kernel, hdim.InfluenceKernel):
        return hdim.predict_response_hdim2(kernel, corr, L_pos, L_neg)
    return tim.predict_response_tim(kernel, corr, L_pos, L_neg)


def _signature(kernel, corr, noise, lags):
    if isinstance(kernel, hdim.InfluenceKernel):
        return hdim.signature_hdim2(kernel, corr, noise, lags)
    if kernel.variant == "TIM1":
        return tim.signature_tim1(kernel, corr, noise, lags)
    return tim.signature_tim2(kernel, corr, noise, lags)


def _model_cmd(args, variant_of):
    prov = provenance(vars(args))
    if args.action == "calibrate":
        corr = stats.correlation_from_dict(_read_json(args.corr))
        resp = stats.response_from_dict(_read_json(args.resp))
        k = _calibrate(variant_of(args), corr, resp, args.L)
        _write_json(k.to_dict(), args.out)
        print(json.dumps({"out": str(args.out), "residual": k.residual}))
    elif args.action == "predict":
        corr = stats.correlation_from_dict(_read_json(args.corr))
        k = _load_kernel(args.kernel)
        lags, R, R_cond = _predict(k, corr, args.L_pos, args.L_neg)
        rows = [[int(l), float(R[i])] + ([float(R_cond[0, i]), float(R_cond[1, i])]
                                         if R_cond is not None else [])
                for i, l in enumerate(lags)]
        header = ["lag", "R_model"] + (["R_NC_model", "R_C_model"] if R_cond is not None else [])
        stats.write_csv(rows, header, args.out, prov)
        print(json.dumps({"out": str(args.out)}))
    else:
        corr = stats.correlation_from_dict(_read_json(args.corr))
        k = _load_kernel(args.kernel)
        lags = _lag_list(args.lags)
        noise = _noise(args.noise)
        fit = None
        if args.fit_noise:
            resp = _read_json(args.fit_noise)
            D_emp = np.asarray(resp["D"], float)
            lags = lags[lags <= len(D_emp)]
            base = _signature(k, corr, tim.NoiseParams(), lags)
            fit = noisefit.fit_noise(D_emp[lags - 1], base, lags, fit_on_ld=args.fit_on_ld)
            noise = fit.params
        D = _signature(k, corr, noise, lags)
        stats.write_csv([[int(l), float(d)] for l, d in zip(lags, D)], ["lag", "D_model"],
                        args.out, prov)
        print(json.dumps({"out": str(args.out),
                          "noise": fit.to_dict() if fit else {"D_LF": noise.D_LF,
                                                              "D_HF": noise.D_HF}}))


def cmd_tim(args):
    _model_cmd(args, lambda a: f"tim{a.variant}")


def cmd_hdim(args):
    _model_cmd(args, lambda a: "hdim2")


def cmd_dar(args):
    if args.action == "simulate":
        spec = dar.DarSpec.load(args.spec)
        eps = dar.simulate(spec, args.n, seed=args.seed)
        with Path(args.out).open("w", newline="") as fh:
            fh.write("sign\n")
            fh.write("\n".join(map(str, eps.tolist())))
            fh.write("\n")
        print(json.dumps({"out": str(args.out), "n": int(args.n)}))
    elif args.action == "forward":
        C = dar.yule_walker_forward(dar.DarSpec.load(args.spec), args.L)
        print(json.dumps({"C": C.tolist()}))
    elif args.action == "inverse":
        d = _read_json(args.corr)
        C = np.asarray(d["C"], float)[: args.L + 1]
        spec = dar.yule_walker_inverse(C)
        spec.save(args.out)
        print(json.dumps({"out": str(args.out), "rho": spec.rho}))
    else:
        spec = dar.DarSpec.load(args.spec)
        print(json.dumps({"dG": dar.hdim1_kernel_map(spec, args.G1).tolist()}))


def _generator_spec(args):
    if args.spec:
        spec = synth.GeneratorSpec.from_dict(_read_json(args.spec))
        changes = {}
        if args.n_given:
            changes["n"] = args.n
        if args.seed_given:
            changes["seed"] = args.seed
        spec = spec.replace(**changes) if changes else spec
    else:
        spec = synth.preset(args.preset, args.n, args.seed)
    if args.signs:
        spec = spec.replace(signs=_read_signs(args.signs))
    return spec


def cmd_synth(args):
    spec = _generator_spec(args)
    series = synth.generate(spec)
    write_tape(series, args.out)
    print(json.dumps({"out": str(args.out), "events": len(series), "days": series.n_days,
                      "P_C": float(series.is_c.mean())}))


def run_instrument(series, cfg, out_root: Path):
    """Full estimate-calibrate-predict-report chain for one instrument.

    Everything is written to a temporary sibling directory that replaces
    ``out/<instrument>/<variant>`` only once every file is complete.
    """
    variant = cfg["variant"]
    L, max_lag, sig_lag = cfg["L"], cfg["max_lag"], cfg["sig_lag"]
    prov = provenance(cfg)
    final = out_root / series.instrument_id / variant
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{variant}-", dir=final.parent))
    try:
        horizon = max(max_lag, sig_lag) + L
        longest = int(series.day_lengths.max()) - 1
        if horizon > longest:
            raise ValidationError(f"lags up to {horizon} need day segments longer than {longest}")
        corr, resp = _estimate(series, horizon, max_lag, L, pair=variant == "hdim2",
                               min_count=cfg["min_count"])
        if variant != "tim1" and corr.C_cond is None:
            raise ValidationError(f"{variant} needs both event types at least "
                                  f"{cfg['min_count']} times")
        _write_estimates(series, corr, resp, tmp, prov)
        fres = None
        if variant == "hdim2":
            fres = stats.factorization_residual(series, corr)["max_abs"]
            kernel = hdim.calibrate_hdim2(corr, resp, L, factorization_residual=fres)
        else:
            kernel = _calibrate(variant, corr, resp, L)
        _write_json(kernel.to_dict(), tmp / "kernel.json")

        lags, R_model, Rc_model = _predict(kernel, corr, 0, max_lag)
        _, R_pos_model, Rc_pos_model = _predict(kernel, corr, L, 0)
        rows = []
        neg = np.arange(max_lag, 0, -1)
        for l in neg:
            i = resp.idx(-l)
            rows.append([int(-l), float(resp.R[i]), float(R_model[max_lag - l]),
                         float(resp.R_cond[0, i]), float(resp.R_cond[1, i]),
                         float(Rc_model[0, max_lag - l]) if Rc_model is not None else float("nan"),
                         float(Rc_model[1, max_lag - l]) if Rc_model is not None else float("nan")])
        for l in range(0, L + 1):
            i = resp.idx(l)
            rows.append([l, float(resp.R[i]), float(R_pos_model[l]),
                         float(resp.R_cond[0, i]), float(resp.R_cond[1, i]),
                         float(Rc_pos_model[0, l]) if Rc_pos_model is not None else float("nan"),
                         float(Rc_pos_model[1, l]) if Rc_pos_model is not None else float("nan")])
        stats.write_csv(rows, ["lag", "R_emp", "R_model", "R_NC_emp", "R_C_emp", "R_NC_model",
                               "R_C_model"], tmp / "response_prediction.csv", prov)

        ratio = stats.deviation_ratio(resp, R_model[max_lag - neg], neg)
        stats.write_csv([[int(l), float(r)] for l, r in zip(neg[::-1], ratio[::-1])],
                        ["lag", "deviation_ratio"], tmp / "deviation_ratio.csv", prov)

        sig_lags = np.arange(1, sig_lag + 1)
        D_emp, D_se = stats.signature_plot(series, sig_lag, with_stderr=True)
        base = _signature(kernel, corr, tim.NoiseParams(), sig_lags)
        fit = noisefit.fit_noise(D_emp, base, sig_lags, fit_on_ld=cfg["fit_on_ld"])
        D_model = base + fit.params.D_LF + fit.params.D_HF / sig_lags
        stats.write_csv([[int(l), float(a), float(b), float(c)]
                         for l, a, b, c in zip(sig_lags, D_emp, D_se, D_model)],
                        ["lag", "D_emp", "D_se", "D_model"], tmp / "signature.csv", prov)

        sign_ok = None
        if isinstance(kernel, tim.TimKernel) and kernel.variant == "TIM1":
            expect = -np.cumsum([kernel.dG[0] @ corr.c(np.arange(kernel.L + 1) + i)
                                 for i in range(1, max_lag + 1)])
            sign_ok = bool(np.all(np.sign(R_model[:max_lag][::-1]) == np.sign(expect)))
        summary = {
            "instrument": series.instrument_id, "variant": variant, "events": len(series),
            "days": series.n_days, "P_C": float(series.is_c.mean()),
            "sigma_trade": resp.sigma_trade, "residual": kernel.residual,
            "noise_fit": fit.to_dict(), "provenance": prov,
        }
        if variant == "hdim2":
            summary["factorization_residual"] = fres
        if variant == "tim2":
            summary["G_NC_1"] = float(kernel.dG[0, 0])
        if sign_ok is not None:
            summary["negative_lag_sign_consistent"] = sign_ok
        _write_json(summary, tmp / "summary.json")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        return summary
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def cmd_pipeline(args):
    cfg = {k: getattr(args, k) for k in DEFAULTS if hasattr(args, k)}
    out_root = _out_root(args.out)
    sources = []
    if args.tape:
        for path in args.tape:
            sources.append(("tape", path))
    if args.preset:
        sources.append(("preset", args.preset))
    if not sources:
        raise ValidationError("pipeline needs --tape or --preset")
    if args.variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")

    def work(src):
        kind, value = src
        if kind == "tape":
            series = ingest_tape(value, args.session, args.tick_size)
        else:
            series = synth.generate(synth.preset(value, args.n, args.seed))
        return run_instrument(series, cfg, out_root)

    with ThreadPoolExecutor(max_workers=max(1, min(args.workers, len(sources)))) as pool:
        summaries = list(pool.map(work, sources))
    print(json.dumps(summaries, indent=1))


def cmd_roundtrip(args):
    if args.acceptance is not None:
        ids = args.acceptance or sorted(validation.ACCEPTANCE)
        results = [validation.ACCEPTANCE[i]() for i in ids]
    else:
        results = validation.preset_roundtrip(args.preset, args.variant, args.n, args.seed, args.L)
    for r in results:
        print(r.line(), file=sys.stderr)
    report = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    print(json.dumps(report, indent=1))
    return 0 if report["passed"] else 1


# ----------------------------------------------------------------- parser

def _common_tape(p):
    p.add_argument("--tape", required=True, help="CSV tape path")
    p.add_argument("--session", default=None, help="daily window, e.g. 09:30-15:30")
    p.add_argument("--tick-size", type=float, default=None, help="validate mids on the half-tick grid")


def _model_parser(sub, name, with_variant):
    p = sub.add_parser(name, help=f"{name.upper()} calibration, prediction and signature plot")
    acts = p.add_subparsers(dest="action", required=True)
    c = acts.add_parser("calibrate", help="solve for the kernel")
    if with_variant:
        c.add_argument("--variant", choices=("1", "2"), default="2")
    c.add_argument("--L", type=int, default=None, help="kernel truncation lag")
    c.add_argument("--corr", required=True)
    c.add_argument("--resp", required=True)
    c.add_argument("--out", required=True)
    pr = acts.add_parser("predict", help="model responses at negative and positive lags")
    pr.add_argument("--kernel", required=True)
    pr.add_argument("--corr", required=True)
    pr.add_argument("--L-pos", dest="L_pos", type=int, default=0)
    pr.add_argument("--L-neg", dest="L_neg", type=int, default=100)
    pr.add_argument("--out", required=True)
    s = acts.add_parser("signature", help="model signature plot D(l)")
    s.add_argument("--kernel", required=True)
    s.add_argument("--corr", required=True)
    s.add_argument("--lags", default="1:100", help="'1:100' or '1,10,100'")
    s.add_argument("--noise", default=None, help="D_LF,D_HF")
    s.add_argument("--fit-noise", default=None, metavar="RESP_JSON",
                   help="fit D_LF, D_HF against the empirical D in this responses file")
    s.add_argument("--fit-on-ld", action="store_true", help="fit l*D(l) instead of D(l)")
    s.add_argument("--out", required=True)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="propimpact", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"propimpact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read and validate a tape")
    _common_tape(p)
    p.add_argument("--out", default=None, help="write the canonical tape here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="correlations, responses and exports")
    _common_tape(p)
    p.add_argument("--L", type=int, default=None, help="positive response lags")
    p.add_argument("--max-lag", dest="max_lag", type=int, default=None,
                   help="correlation and negative response horizon")
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_stats)

    _model_parser(sub, "tim", True).set_defaults(func=cmd_tim)
    _model_parser(sub, "hdim", False).set_defaults(func=cmd_hdim)

    p = sub.add_parser("dar", help="DAR sign processes")
    acts = p.add_subparsers(dest="action", required=True)
    a = acts.add_parser("simulate", help="emit a sign column")
    a.add_argument("--spec", required=True)
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a = acts.add_parser("forward", help="Yule-Walker autocorrelation of a spec")
    a.add_argument("--spec", required=True)
    a.add_argument("--L", type=int, default=100)
    a = acts.add_parser("inverse", help="DAR spec reproducing C(0..L) from a correlations file")
    a.add_argument("--corr", required=True)
    a.add_argument("--L", type=int, default=20)
    a.add_argument("--out", required=True)
    a = acts.add_parser("map", help="equivalent transient kernel of the efficient model")
    a.add_argument("--spec", required=True)
    a.add_argument("--G1", type=float, default=1.0)
    p.set_defaults(func=cmd_dar)

    p = sub.add_parser("synth", help="generate a synthetic tape")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=synth.PRESETS)
    g.add_argument("--spec", help="GeneratorSpec JSON")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--signs", default=None, help="sign column from 'dar simulate'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="full report bundle per instrument")
    p.add_argument("--tape", action="append", default=None, help="repeat for several instruments")
    p.add_argument("--preset", choices=synth.PRESETS, default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--session", default=None)
    p.add_argument("--tick-size", dest="tick_size", type=float, default=None)
    p.add_argument("--L", type=int, default=None, help="kernel truncation lag")
    p.add_argument("--max-lag", dest="max_lag", type=int, default=None,
                   help="largest negative lag predicted")
    p.add_argument("--sig-lag", dest="sig_lag", type=int, default=None,
                   help="largest signature-plot lag")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--fit-on-ld", dest="fit_on_ld", action="store_true", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./out)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("roundtrip", help="synthetic round-trip checks with pass/fail report")
    p.add_argument("--preset", choices=synth.PRESETS, default="large-tick")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--acceptance", nargs="*", type=int, default=None,
                   help="run the numbered acceptance checks instead (all when no numbers)")
    p.set_defaults(func=cmd_roundtrip)
    return parser


def _apply_config(args, config):
    """Fill unset options from the config file, then from the built-in defaults."""
    args.n_given = getattr(args, "n", None) is not None
    args.seed_given = getattr(args, "seed", None) is not None
    section = {**config, **config.get(args.command, {})} if config else {}
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            value = section.get(key, default)
            if key == "tape" and isinstance(value, str):
                value = [value]
            setattr(args, key, value)
    if getattr(args, "L", None) is None:
        args.L = DEFAULTS["L"]
    if args.command == "pipeline" and args.session is None:
        args.session = DEFAULT_SESSION
    return args


def _failing_module(exc):
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        parts = Path(frame.filename).parts
        if "propimpact" in parts:
            return Path(frame.filename).stem
    return "propimpact"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _read_json(args.config) if args.config else {}
        _apply_config(args, config)
        status = args.func(args)
    except PropImpactError as exc:
        print(f"error [{_failing_module(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
