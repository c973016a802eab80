"""Command line: simulate, fit, pcv, report.

A run is described by an INI config file::

    [data]
    path = grouped.csv
    response = y
    covariates = x0,x1,x2,x3
    group = group

    [scheme]
    type = logo            ; logo, loo, kfold, time-block or seasonal-block

    [model_a]
    family = grouped-reg
    mask = 1,1,1,1

    [model_b]
    family = grouped-reg
    mask = 1,1,1,0

    [run]
    chains = 4
    iters = 1000
    out = results

Command-line flags override the [run] section.
"""

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import core, engine, io
from .core import InvalidInputError, PCVError, UnsupportedScoreError
from .engine import FullDataResult, RunConfig
from .models import (GroupedRegressionModel, NormalMeanModel, RadonModel, RatGrowthModel,
                     SeasonalARModel, make_seasonal_block_scheme, simulate_grouped_regression,
                     simulate_radon, simulate_rats, simulate_seasonal_ar)

EXIT_USAGE = 2
EXIT_INFERENCE = 3

SIMULATORS = ("grouped-reg", "rats", "radon", "seasonal-ar")
MODEL_SECTIONS = ("model_a", "model_b")

RUN_KEYS = {
    "chains": int, "iters": int, "warmup": int, "blocks": int, "bench_draws": int,
    "seed": int, "score": str, "checkpoint_every": int, "thread_budget": int,
    "n_leapfrog": int, "fd_chains": int, "fd_warmup": int, "fd_draws": int,
    "quantile": float, "target_accept": float, "chains_per_task": int,
}


class UsageError(InvalidInputError):
    pass


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    need = {"grouped-reg": ("J", "Nj"), "rats": ("J",), "radon": ("houses", "J"),
            "seasonal-ar": ("T", "p", "q")}[args.model]
    missing = [f"--{n}" for n in need if getattr(args, n) is None]
    if missing:
        raise UsageError(f"simulate {args.model} requires {', '.join(missing)}")
    if args.model == "grouped-reg":
        data, truth = simulate_grouped_regression(args.J, args.Nj, rng,
                                                  min_abs_last_beta=args.min_abs_last_beta)
    elif args.model == "rats":
        data, truth = simulate_rats(args.J, rng)
    elif args.model == "radon":
        data, truth = simulate_radon(args.houses, args.J, rng)
    else:
        data, truth = simulate_seasonal_ar(args.T, args.p, args.q, rng)
    out = args.out or f"{args.model}.csv"
    data.to_csv(out)
    io.write_json(os.path.splitext(out)[0] + ".truth.json", truth)
    print(f"wrote {data.n_obs} rows to {out}")
    return 0


# ---------------------------------------------------------------- config

def read_config(path):
    if not path:
        raise UsageError("--config is required")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    for sec in ("data", "scheme", "model_a"):
        if not cp.has_section(sec):
            raise UsageError(f"config {path} has no [{sec}] section")
    return cp


def _list(value, kind=str):
    return [kind(v.strip()) for v in value.split(",") if v.strip()] if value else []


def _bool(value):
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def load_dataset(cp, base):
    sec = cp["data"]
    path = sec.get("path")
    if not path:
        raise UsageError("[data] needs a path")
    if not os.path.isabs(path):
        path = os.path.join(base, path)
    return core.Dataset.from_csv(path, response=sec.get("response", "y"),
                                 covariates=_list(sec.get("covariates")),
                                 group=sec.get("group") or None, time=sec.get("time") or None)


def make_scheme(cp, data):
    sec = cp["scheme"]
    kind = sec.get("type", "logo")
    if kind == "logo":
        return core.make_logo_scheme(data)
    if kind == "loo":
        return core.make_loo_scheme(data)
    if kind == "kfold":
        return core.make_kfold_scheme(data, sec.getint("K"), sec.getint("seed", 0))
    if kind == "time-block":
        return core.make_time_block_scheme(data, sec.getint("K"))
    if kind == "seasonal-block":
        return make_seasonal_block_scheme(data, sec.getint("K"), sec.getint("start"))
    raise UsageError(f"unknown scheme type {kind!r}")


def make_model(sec, data, folds, scheme_sec):
    family = sec.get("family")
    if family == "grouped-reg":
        mask = _list(sec.get("mask"), float) or None
        return GroupedRegressionModel(data, folds, selection=mask,
                                      predictive=sec.get("predictive", "auto"))
    if family == "rats":
        return RatGrowthModel(data, folds, random_slope=_bool(sec.get("random_slope", "true")),
                              predictive=sec.get("predictive", "auto"))
    if family == "radon":
        return RadonModel(data, folds, floor=_bool(sec.get("floor", "true")),
                          predictive=sec.get("predictive", "auto"))
    if family == "seasonal-ar":
        return SeasonalARModel(data, folds, lags=_list(sec.get("lags", "1"), int),
                               q=sec.getint("q", 11), start=scheme_sec.getint("start"),
                               rho_transform=sec.get("rho_transform", "literal"))
    if family == "normal-mean":
        return NormalMeanModel(data, folds, sigma=sec.getfloat("sigma", 1.0),
                               tau=sec.getfloat("tau", 10.0))
    raise UsageError(f"unknown model family {family!r}")


def run_config(cp, args):
    values = {}
    if cp.has_section("run"):
        for key, kind in RUN_KEYS.items():
            if cp.has_option("run", key):
                values[key] = kind(cp.get("run", key))
        if cp.has_option("run", "batch_size"):
            bs = cp.get("run", "batch_size")
            values["batch_size"] = bs if bs == "auto" else int(bs)
    flags = {"chains": args.chains, "iters": args.iters, "warmup": args.warmup,
             "blocks": args.blocks, "bench_draws": args.bench_draws, "seed": args.seed,
             "score": args.score, "checkpoint_every": args.checkpoint_every,
             "thread_budget": args.threads}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.batch_size is not None:
        values["batch_size"] = args.batch_size if args.batch_size == "auto" \
            else int(args.batch_size)
    return RunConfig(**values)


def output_dir(cp, args, base):
    out = args.out or (cp.get("run", "out") if cp.has_option("run", "out") else "parcv-out")
    if not os.path.isabs(out):
        out = os.path.join(base, out) if not args.out else out
    os.makedirs(out, exist_ok=True)
    return out


def load_setup(args):
    cp = read_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    data = load_dataset(cp, base)
    folds = make_scheme(cp, data)
    models = [make_model(cp[s], data, folds, cp["scheme"]) for s in MODEL_SECTIONS
              if cp.has_section(s)]
    cfg = run_config(cp, args)
    return cp, cfg, models, output_dir(cp, args, base)


# ---------------------------------------------------------------- fit / pcv

def cmd_fit(args):
    cp, cfg, models, out = load_setup(args)
    for mid, (sec, model) in enumerate(zip(MODEL_SECTIONS, models)):
        try:
            fd = engine.run_full_data(model, cfg, mid)
        except PCVError as exc:
            state = getattr(exc, "state", None)
            if state is not None:
                io.write_json(os.path.join(out, f"{sec}.failure.json"),
                              {"error": str(exc), "position": state.position.tolist(),
                               "logp": [float(v) for v in state.logp]})
            raise
        io.write_draw_bank(os.path.join(out, f"{sec}.draws.bin"), fd.draws, model.param_names)
        io.write_kernel(os.path.join(out, f"{sec}.kernel.json"), fd.kernel)
        io.write_json(os.path.join(out, f"{sec}.fit.json"), _json_clean(fd.diagnostics))
        print(f"{sec}: step_size={fd.kernel.step_size:.4g} n_leapfrog={fd.kernel.n_leapfrog} "
              f"draws={fd.draws.shape[0]}x{fd.draws.shape[1]}")
    return 0


def _json_clean(obj):
    return json.loads(json.dumps(obj))


def cmd_pcv(args):
    cp, cfg, models, out = load_setup(args)
    full = []
    for mid, (sec, model) in enumerate(zip(MODEL_SECTIONS, models)):
        bank = os.path.join(out, f"{sec}.draws.bin")
        kern = os.path.join(out, f"{sec}.kernel.json")
        if not (os.path.exists(bank) and os.path.exists(kern)):
            raise UsageError(f"missing full-data artifacts for [{sec}] in {out}; run fit first")
        draws, meta = io.read_draw_bank(bank)
        if draws.shape[-1] != model.dim:
            raise UsageError(f"draw bank for [{sec}] has dimension {draws.shape[-1]}, "
                             f"model needs {model.dim}")
        full.append(FullDataResult(io.read_kernel(kern), draws, {}, mid))
    report = engine.run_pcv(models, cfg, full_data=full)
    io.write_report(os.path.join(out, "report.json"), report)
    io.write_progressive_csv(os.path.join(out, "progressive.csv"), report)
    io.write_benchmark_csv(os.path.join(out, "benchmark.csv"), report)
    print(format_report(report))
    return 0


# ---------------------------------------------------------------- report

def _num(v, fmt=".4g"):
    return "n/a" if v is None else format(v, fmt)


def format_report(report):
    lines = []
    names = ", ".join(f"{chr(65 + i)}={m['name']}" for i, m in enumerate(report.models))
    cfg = report.config
    lines.append(f"models: {names}")
    lines.append(f"folds: K={report.K}  chains={cfg['chains']}  iters={cfg['iters']}  "
                 f"score={cfg['score']}")
    for i, s in enumerate(report.s_hat):
        lines.append(f"S_hat[{chr(65 + i)}]: {_num(s)}")
    if report.delta_hat is not None:
        lines.append(f"delta_hat: {_num(report.delta_hat)}")
    lines.append(f"mcse: {_num(report.mcse)}")
    lines.append(f"epistemic_se: {_num(report.epistemic_se)}")
    if report.prob_a_better is not None:
        lines.append(f"prob_a_better: {_num(report.prob_a_better)}")
    lines.append(f"ess: {_num(report.ess, '.1f')}")
    v = report.verdict
    if v:
        lines.append(f"rhat_max: {_num(report.rhat_max, '.5f')}  benchmark q{v['quantile']:g}: "
                     f"{_num(v['threshold'], '.5f')}")
        lines.append(f"verdict: {'pass' if v['passed'] else 'fail'}")
    else:
        lines.append(f"rhat_max: {_num(report.rhat_max, '.5f')}")
        lines.append("verdict: n/a")
    lines.append(f"divergences: {int(np.sum(report.divergences))}")
    ex = report.excluded_folds
    lines.append("excluded folds: " + (", ".join(map(str, ex)) if ex else "none"))
    if report.rhat_undefined:
        lines.append(f"folds with undefined rhat: {report.rhat_undefined}")
    return "\n".join(lines)


def cmd_report(args):
    report = io.read_report(args.report)
    print(format_report(report))
    return 0


# ---------------------------------------------------------------- main

def _run_flags(p):
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", "--n", dest="iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--batch-size")
    p.add_argument("--blocks", type=int)
    p.add_argument("--bench-draws", type=int)
    p.add_argument("--score", choices=("logs", "hs", "dss"))
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")


def build_parser():
    parser = argparse.ArgumentParser(prog="parcv", description="Parallel brute-force Bayesian CV")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset and its true parameters")
    sim.add_argument("model", choices=SIMULATORS)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--J", type=int)
    sim.add_argument("--Nj", type=int)
    sim.add_argument("--houses", type=int)
    sim.add_argument("--T", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--q", type=int)
    sim.add_argument("--min-abs-last-beta", type=float)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    for name, func, text in (("fit", cmd_fit, "full-data fits and draw banks"),
                             ("pcv", cmd_pcv, "parallel CV from saved full-data fits")):
        p = sub.add_parser(name, help=text)
        _run_flags(p)
        p.set_defaults(func=func)

    rep = sub.add_parser("report", help="print a summary of a report JSON")
    rep.add_argument("report")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, UnsupportedScoreError) as exc:
        print(f"parcv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PCVError as exc:
        print(f"parcv {args.command}: inference failed: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
