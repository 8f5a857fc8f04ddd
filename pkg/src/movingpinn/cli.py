"""Command-line entry point.

Subcommands: solve, compare, check-gradients, hmc-diag, dump-samples.
Configuration comes from a YAML file plus dotted-path overrides; usage and
configuration errors exit with status 2.
"""

from __future__ import annotations

import argparse
import sys

import yaml

from .harness import (
    RunConfig,
    compare,
    errors_csv,
    gradient_check_report,
    hmc_diagnostics,
    solve_run,
)
from .nets import ConfigurationError
from .problems import PROBLEM_IDS
from .trainers import METHODS


def _add_common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--problem", choices=PROBLEM_IDS)
    p.add_argument("overrides", nargs="*", metavar="key=value",
                   help="dotted-path config overrides")


def _build_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config, args.overrides)
    else:
        cfg = RunConfig().apply_overrides(args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.method is not None:
        cfg.method = args.method
    if args.problem is not None:
        cfg.problem = args.problem
    return cfg.validate()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="movingpinn")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "dump-samples"):
        _add_common(sub.add_parser(name))
    p = sub.add_parser("compare")
    _add_common(p)
    p.add_argument("--methods", default="pinn,pmsm",
                   help="comma-separated methods to compare")
    p = sub.add_parser("check-gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=1000)
    p = sub.add_parser("hmc-diag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4000)
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "solve":
        cfg = _build_config(args)
        result, report = solve_run(cfg)
        print(yaml.safe_dump({
            "problem": cfg.problem, "method": cfg.method,
            "rel_l2": report.rel_l2, "l_inf": report.l_inf,
            "epochs": result.solution_steps,
            "peak_train_points": result.peak_train_points,
            "wall_s": report.wall_s, "flags": result.flags,
        }, sort_keys=True), end="")
        return 0
    if args.command == "compare":
        base = _build_config(args)
        configs = []
        for method in args.methods.split(","):
            cfg = RunConfig.from_dict(base.to_dict())
            cfg.method = method.strip()
            if base.out:
                cfg.out = f"{base.out}/{cfg.method}"
            configs.append(cfg)
        rows = compare(configs, out=base.out)
        sys.stdout.write(errors_csv(rows))
        return 0
    if args.command == "check-gradients":
        report = gradient_check_report(seed=args.seed, n_cases=args.cases)
        print(yaml.safe_dump(report, sort_keys=True), end="")
        return 0 if report["passed"] else 1
    if args.command == "hmc-diag":
        report = hmc_diagnostics(seed=args.seed, n=args.n)
        print(yaml.safe_dump(report, sort_keys=True), end="")
        return 0 if report["passed"] else 1
    if args.command == "dump-samples":
        cfg = _build_config(args)
        if cfg.method == "pinn":
            raise ConfigurationError("the fixed-point baseline has no trajectory")
        result, _ = solve_run(cfg)
        text = result.trajectory.to_csv()
        sys.stdout.write(text)
        return 0
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
