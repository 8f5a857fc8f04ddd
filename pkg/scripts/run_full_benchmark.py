#!/usr/bin/env python3
"""Full published-schedule run for one benchmark (hours to days on CPU).

Uses the per-problem epoch and point budgets from the trainers module
(e.g. burgers2d: 7500 + 20x1500 + 15000 = 52500 solution epochs).
"""

import argparse

import yaml

from movingpinn.harness import RunConfig, solve_run
from movingpinn.trainers import published_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="burgers2d")
    ap.add_argument("--method", default="pmsm")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--out", default=None)
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    args = ap.parse_args()

    cfg = RunConfig(problem=args.problem, method=args.method, seed=args.seed,
                    window=args.window)
    cfg.schedule = published_schedule(args.problem)
    cfg.out = args.out or f"out/full/{args.problem}/{args.method}"
    cfg.apply_overrides(args.overrides)
    result, report = solve_run(cfg)
    print(yaml.safe_dump({
        "problem": cfg.problem, "method": cfg.method,
        "rel_l2": report.rel_l2, "l_inf": report.l_inf,
        "epochs": result.solution_steps, "wall_s": report.wall_s,
    }, sort_keys=True), end="")


if __name__ == "__main__":
    main()
