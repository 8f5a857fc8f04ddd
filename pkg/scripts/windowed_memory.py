#!/usr/bin/env python3
"""Point-count accounting for the windowed-reset variant.

Reproduces the memory-trend comparison as per-round training-set sizes:
the windowed engine plateaus at W*(N+N_u) while the unwindowed one grows
by (N+N_u) per round. Uses the fokker_planck3d schedule shape with toy
epoch counts so it finishes in minutes.
"""

import argparse

from movingpinn.harness import RunConfig, solve_run

TOY_FP3D = [
    "problem=fokker_planck3d",
    "schedule.epochs_pretrain=5",
    "schedule.epochs_per_round=2",
    "schedule.epochs_velocity=2",
    "schedule.epochs_final=5",
    "schedule.k_ext=18",
    "schedule.n_adaptive=20",
    "schedule.n_uniform=30",
    "schedule.n_initial=20",
    "schedule.n_boundary=8",
    "hmc.n_chains=8",
    "hmc.burn_in=100",
    "eval.per_axis=8",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for method, window in (("pmsm", 0), ("wr_pmsm", args.window)):
        cfg = RunConfig(method=method, seed=args.seed, window=window or 10)
        cfg.apply_overrides(TOY_FP3D)
        result, _ = solve_run(cfg)
        counts = result.round_interior_counts
        print(f"{method:8s} peak={result.peak_train_points:6d} per-round={counts}")


if __name__ == "__main__":
    main()
