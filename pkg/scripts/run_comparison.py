#!/usr/bin/env python3
"""Desk-scale method comparison on one benchmark.

Runs the chosen methods under matched budgets with a reduced schedule
(about 1/10 of the published epoch totals for burgers2d) and writes
errors.csv plus per-run artifacts under --out.
"""

import argparse

from movingpinn.harness import RunConfig, compare, errors_csv

REDUCED = [
    "schedule.epochs_pretrain=750",
    "schedule.epochs_per_round=150",
    "schedule.epochs_velocity=500",
    "schedule.epochs_final=1500",
    "schedule.k_ext=20",
    "schedule.n_adaptive=100",
    "schedule.n_uniform=200",
    "schedule.n_initial=300",
    "schedule.n_boundary=100",
    "schedule.minibatch=1024",
    "eval.per_axis=32",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="burgers2d")
    ap.add_argument("--methods", default="pinn,pmsm")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/comparison")
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    args = ap.parse_args()

    configs = []
    for method in args.methods.split(","):
        cfg = RunConfig(problem=args.problem, method=method.strip(), seed=args.seed)
        cfg.apply_overrides(REDUCED + args.overrides)
        cfg.out = f"{args.out}/{cfg.method}"
        configs.append(cfg)
    rows = compare(configs, out=args.out)
    print(errors_csv(rows), end="")


if __name__ == "__main__":
    main()
