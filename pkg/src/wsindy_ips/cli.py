"""Command-line entry point ``wsindy-ips``.

Verbs: ``simulate`` (write a particle dataset), ``identify`` (learn a model
from a stored dataset), ``run`` (full pipeline for a config), ``sweep`` (the
same with a fitted convergence rate) and ``report`` (summarize a finished run).
Flags mirror the config keys and override values from ``--config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from wsindy_ips.experiment import (
    PRESETS,
    ExperimentConfig,
    emit_plot_data,
    format_model,
    identify,
    load_report,
    make_init,
    run,
)
from wsindy_ips.metrics import rate_fit
from wsindy_ips.sde_sim import SimConfig, add_extrinsic_noise, get_model, load_dataset, save_dataset, simulate

CONFIG_FLAGS = (
    ("--preset", str), ("--model", str), ("--N", str), ("--M", str), ("--eps", str),
    ("--trials", int), ("--seed", int), ("--workers", int), ("--output", str),
    ("--dt-fine", float), ("--subsample", int), ("--L", int), ("--init", str),
    ("--bins", int), ("--m-x", int), ("--m-t", int), ("--s-x", int), ("--s-t", int),
    ("--p-x", int), ("--p-t", int), ("--lambda-min", float), ("--lambda-max", float),
    ("--lambda-count", int), ("--kernel-method", str),
)  # fmt: skip


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file; flags given on the command line override it")
    for flag, typ in CONFIG_FLAGS:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--dump-system", action="store_true", default=None, help="write system_dump_*.bin files")


def _config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values = ExperimentConfig.from_ini(args.config).as_dict()
    for flag, _ in CONFIG_FLAGS + (("--dump-system", None),):
        key = flag[2:].replace("-", "_")
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if "preset" not in values:
        raise SystemExit("a preset is required (--preset or [experiment] preset in --config)")
    if "N" not in values:
        raise SystemExit("at least one particle count is required (--N)")
    return ExperimentConfig.from_mapping(values)


def _print_summary(report) -> None:
    for s in report.summary():
        line = f"N={s['N']:<7d} M={s['M']:<4d} eps={s['eps']:<8g}"
        if "tpr_mean" in s:
            line += (
                f" tpr={s['tpr_mean']:.3f} identified={s['fraction_identified']:.2f}"
                f" errK(med)={s['rel_err_K_median']:.3g} errV(med)={s['rel_err_V_median']:.3g}"
                f" errS(med)={s['rel_err_sigma_median']:.3g}"
            )
        if s["errors"]:
            line += f" errors={s['errors']}"
        print(line)


def cmd_simulate(args) -> int:
    cfg = _config(args).resolved()
    model = get_model(cfg.model)
    sim = SimConfig(cfg.dt_fine, cfg.subsample, cfg.N[0], cfg.M[0], cfg.L, cfg.seed)
    data = add_extrinsic_noise(simulate(model, make_init(cfg.init), sim), cfg.eps[0], cfg.seed)
    save_dataset(data, args.dataset)
    print(f"wrote {args.dataset}: M={data.M} L={data.L} N={data.N} d={data.d}")
    return 0


def cmd_identify(args) -> int:
    data = load_dataset(args.dataset)
    lambdas = 10.0 ** np.linspace(args.lambda_min, args.lambda_max, args.lambda_count)
    res = identify(data, args.preset, bins=args.bins, lambdas=lambdas, kernel_method=args.kernel_method)
    print(f"G: {res.system.n} x {res.system.J}, kappa = {res.kappa:.3g}, lambda = {res.solution.lam:.4g}")
    print(format_model(res.library, res.solution.coeffs))
    if args.loss_csv:
        res.solution.loss_curve_csv(args.loss_csv, res.library.descriptors)
    return 0


def cmd_run(args, sweep: bool = False) -> int:
    cfg = _config(args)
    if sweep and len(cfg.N) < 2:
        raise SystemExit("a sweep needs at least two values of N")
    report = run(cfg)
    _print_summary(report)
    if sweep:
        _print_rates(report)
    if cfg.output:
        print(f"report written to {cfg.output}")
    return 1 if report.any_errors else 0


def _print_rates(report) -> None:
    groups = {}
    for s in report.summary():
        if "rel_err_K_mean" in s:
            groups.setdefault((s["M"], s["eps"]), []).append((s["N"], s["rel_err_K_mean"]))
    for (M, eps), pts in groups.items():
        pts.sort()
        Ns, errs = zip(*pts)
        if len(pts) >= 3 and all(math.isfinite(e) and e > 0 for e in errs):
            print(f"M={M} eps={eps:g}: slope of mean rel_err_K vs N = {rate_fit(Ns, errs):.3f}")


def cmd_report(args) -> int:
    report = load_report(args.path)
    _print_summary(report)
    _print_rates(report)
    if args.plotdata:
        for p in emit_plot_data(report, args.plotdata):
            print(f"wrote {p}")
    return 1 if report.any_errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsindy-ips", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="simulate one dataset (first N, M, eps values) and store it")
    _add_config_flags(p)
    p.add_argument("dataset", help="output file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="identify a model from a stored dataset")
    p.add_argument("dataset")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--lambda-min", type=float, default=-4.0)
    p.add_argument("--lambda-max", type=float, default=0.0)
    p.add_argument("--lambda-count", type=int, default=100)
    p.add_argument("--kernel-method", default="dense", choices=("dense", "lowrank"))
    p.add_argument("--loss-csv", help="write the loss curve here")
    p.set_defaults(func=cmd_identify)

    for verb, helptext, is_sweep in (("run", "full pipeline for every cell", False), ("sweep", "run plus convergence-rate fit", True)):
        p = sub.add_parser(verb, help=helptext)
        _add_config_flags(p)
        p.set_defaults(func=lambda a, s=is_sweep: cmd_run(a, sweep=s))

    p = sub.add_parser("report", help="summarize report.json")
    p.add_argument("path", help="output directory or report.json")
    p.add_argument("--plotdata", help="regenerate plot-data CSVs into this directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
