"""Command-line entry point: simulate, estimate, profile, mc, sweep.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path as FsPath

import numpy as np

from .config import ExperimentConfig, load_config
from .dynamics import SimConfig, read_path_csv, simulate_euler, solve_limiting_ode, step_bound, write_path_csv
from .errors import ConfigError, NumericalError
from .estimate import EstimateReport, estimate_path, limiting_reference
from .likelihood import (
    LikelihoodKind,
    LikelihoodValue,
    limiting_profile,
    limiting_pseudo_profile,
    path_likelihood_function,
    write_profile_csv,
)
from .mc import (
    Coupling,
    default_workers,
    epsilon_sweep,
    run_replications,
    write_histogram_csv,
    write_summary_csv,
    write_theory_csv,
)
from .model import Regime

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msmle", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--regime")
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--theta", type=float, action="append", help="true parameter; repeatable")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--step", type=float)
        sp.add_argument("--horizon", type=float)
        sp.add_argument("--x0", type=float)
        sp.add_argument("--kind", choices=["exact", "pseudo"])
        sp.add_argument("--allow-coarse-step", action="store_true")
        sp.add_argument("--out", help="output directory")
        return sp

    s = common(sub.add_parser("simulate", help="simulate one path and write path.csv"))
    s.add_argument("--stride", type=_positive_int)

    e = common(sub.add_parser("estimate", help="estimate theta from a path CSV"))
    e.add_argument("path", help="path CSV with header t,x")

    pr = common(sub.add_parser("profile", help="likelihood profile on a theta grid"))
    pr.add_argument("--path", dest="path_csv", help="path CSV for exact/pseudo profiles")
    pr.add_argument(
        "--profile-kind",
        default="limiting",
        choices=["exact", "pseudo", "limiting", "limiting-pseudo"],
    )
    pr.add_argument("--points", type=_positive_int, default=201)

    m = common(sub.add_parser("mc", help="Monte Carlo replications"))
    m.add_argument("-M", type=_positive_int)
    m.add_argument("--workers", type=_positive_int)

    w = common(sub.add_parser("sweep", help="Monte Carlo over a list of epsilons"))
    w.add_argument("--epsilons", required=True, help="comma-separated list")
    w.add_argument("--coupling", default="square", help="square | power:p | sqrt:d0 | ratio:g | fixed:d")
    w.add_argument("-M", type=_positive_int)
    w.add_argument("--workers", type=_positive_int)
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    for flag, fieldname in [
        ("epsilon", "epsilon"),
        ("delta", "delta"),
        ("gamma", "gamma"),
        ("seed", "seed"),
        ("step", "step"),
        ("horizon", "horizon"),
        ("x0", "x0"),
        ("out", "output_dir"),
        ("stride", "stride"),
        ("M", "M"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            changes[fieldname] = v
    if args.regime is not None:
        changes["regime"] = Regime.parse(args.regime)
    if args.theta:
        changes["theta_true"] = tuple(args.theta)
    if args.kind is not None:
        changes["kind"] = LikelihoodKind.parse(args.kind)
    if args.allow_coarse_step:
        changes["allow_coarse_step"] = True
    return cfg.replace(**changes) if changes else cfg


def _outdir(cfg: ExperimentConfig) -> FsPath:
    d = FsPath(cfg.output_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {d} is not writable: {exc}") from None
    return d


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    scale = cfg.scale
    step = cfg.resolved_step(scale)
    bound = step_bound(scale, cfg.target_error)
    sim = SimConfig(cfg.x0, cfg.horizon, step, cfg.seed, cfg.stride, (), cfg.allow_coarse_step)
    path = simulate_euler(cfg.model(), scale, cfg.theta_true[0], sim, cfg.target_error)
    out = _outdir(cfg) / "path.csv"
    write_path_csv(path, out)
    print(f"step={step!r} step_bound={bound!r} n_steps={sim.n_steps} stored={path.values.size}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_estimate(cfg: ExperimentConfig, args) -> int:
    path = read_path_csv(args.path, cfg.resolved_step() * cfg.stride)
    model, scale = cfg.model(), cfg.scale
    try:
        reference = limiting_reference(model, scale, cfg.theta_true[0], path.values[0], path.horizon, cfg.ode_step)
    except ConfigError:
        reference = None
    report = estimate_path(path, model, scale, cfg.kind, reference=reference)
    print(report.record())
    out = _outdir(cfg) / "estimate.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EstimateReport.csv_header())
        w.writerow(report.csv_row())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_profile(cfg: ExperimentConfig, args) -> int:
    model, scale = cfg.model(), cfg.scale
    lo, hi = model.theta_domain
    thetas = np.linspace(lo, hi, args.points)
    theta0 = cfg.theta_true[0]
    if args.profile_kind in ("exact", "pseudo"):
        if not args.path_csv:
            raise ConfigError("--path is required for exact and pseudo profiles")
        path = read_path_csv(args.path_csv, cfg.resolved_step() * cfg.stride)
        f = path_likelihood_function(path, model, scale, args.profile_kind)
        kind = LikelihoodKind.parse(args.profile_kind)
        values = [LikelihoodValue(f(t), kind, float(t)) for t in thetas]
    else:
        ode = solve_limiting_ode(model, scale, theta0, cfg.x0, cfg.horizon, cfg.ode_step)
        if args.profile_kind == "limiting":
            values = limiting_profile(ode, model, thetas, theta0, scale.regime, gamma=scale.gamma)
        else:
            values = limiting_pseudo_profile(ode, model, thetas, theta0)
    out = _outdir(cfg) / "profile.csv"
    write_profile_csv(out, values)
    best = max(values, key=lambda v: v.value)
    print(f"argmax theta={best.theta!r} value={best.value!r} kind={best.kind.value}")
    print(f"wrote {out}")
    return EXIT_OK


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def _cell_name(base: str, theta0: float, multi: bool) -> str:
    return f"{base}_theta0={theta0!r}.csv" if multi else f"{base}.csv"


def cmd_mc(cfg: ExperimentConfig, args) -> int:
    outdir = _outdir(cfg)
    workers = _workers(args)
    summaries = []
    multi = len(cfg.theta_true) > 1
    for theta0 in cfg.theta_true:
        s = run_replications(cfg, workers=workers, theta0=theta0)
        summaries.append(s)
        print(
            f"theta0={theta0!r} M={s.M} failures={s.failures} mean={s.mean!r} sd={s.sd!r} "
            f"ci68=({s.ci68[0]!r}, {s.ci68[1]!r}) ci95=({s.ci95[0]!r}, {s.ci95[1]!r})"
        )
        if s.histogram is not None:
            write_histogram_csv(outdir / _cell_name("hist", theta0, multi), s.histogram)
            write_theory_csv(outdir / _cell_name("theory", theta0, multi), s.histogram)
    write_summary_csv(outdir / "summary.csv", summaries)
    print(f"wrote {outdir / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    try:
        epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]
    except ValueError:
        raise ConfigError(f"--epsilons: cannot parse {args.epsilons!r}") from None
    coupling = Coupling.parse(args.coupling)
    result = epsilon_sweep(cfg, epsilons, coupling, workers=_workers(args))
    outdir = _outdir(cfg)
    write_summary_csv(outdir / "sweep.csv", result.rows)
    for row, med in zip(result.rows, result.median_abs_error):
        print(f"epsilon={row.epsilon!r} delta={row.delta!r} mean={row.mean!r} sd={row.sd!r} median_abs_error={med!r}")
    print(f"median_abs_error_nonincreasing={result.median_nonincreasing}")
    for got, want in zip(result.sd_ratios, result.expected_sd_ratios):
        print(f"sd_ratio={got!r} expected={want!r}")
    print(f"wrote {outdir / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "profile": cmd_profile,
    "mc": cmd_mc,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
