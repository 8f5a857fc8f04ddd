"""Run configuration, evaluation metrics, comparison tables, and artifacts.

Everything here is plumbing around the trainers: YAML configs with dotted
overrides, evaluation grids, relative L2 / L-infinity error reports, the
front-concentration diagnostic, CSV emission with 17 significant digits,
and self-check reports for the gradient and sampler machinery.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import __version__, nets
from .nets import ConfigurationError, init_dense_net, save_checkpoint
from .problems import PROBLEM_IDS, PdeProblem, make_problem
from .sampling import HmcConfig, PointSet, hmc_chains, hmc_sample
from .trainers import METHODS, RunResult, TrainSchedule, nt_init_for, run_method
from .transport import Trajectory

__all__ = [
    "EvalSpec",
    "RunConfig",
    "ErrorReport",
    "eval_grid",
    "compute_errors",
    "front_concentration",
    "default_band",
    "solve_run",
    "compare",
    "errors_csv",
    "gradient_check_report",
    "hmc_diagnostics",
]

ERRORS_HEADER = "problem,method,rel_l2,l_inf,epochs,points_per_slice,peak_train_points,wall_s"


@dataclass
class EvalSpec:
    """Evaluation grid parameters. ``per_axis`` 0 picks 64 for d=2 and 32
    for d=3; dimensions above 3 use ``n_random`` seeded uniform points per
    slice instead of a tensor grid."""

    per_axis: int = 0
    plot_dt: float = 0.1
    n_random: int = 100000
    cap: int = 5_000_000
    band: float = 0.0  # 0 = per-problem default
    seed: int = 20240501


@dataclass
class RunConfig:
    problem: str = "burgers2d"
    method: str = "pmsm"
    seed: int = 0
    out: str | None = None
    window: int = 10
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    hmc: HmcConfig = field(default_factory=HmcConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    problem_overrides: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEM_IDS:
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.method == "wr_pmsm" and self.window < nt_init_for(self.problem):
            raise ConfigurationError("window must be >= the initial slice count")
        s = self.schedule
        if min(s.n_uniform, s.n_initial, s.n_boundary, s.n_adaptive) < 1:
            raise ConfigurationError("point counts must be positive")
        if s.k_ext < 0:
            raise ConfigurationError("k_ext must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _dataclass_from_dict(cls, dict(data))

    @classmethod
    def from_file(cls, path, overrides=()) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} is not a mapping")
        cfg = cls.from_dict(data)
        return cfg.apply_overrides(overrides)

    def apply_overrides(self, overrides) -> "RunConfig":
        """Dotted-path assignments like ``schedule.k_ext=3``; values are
        parsed with YAML scalar rules."""
        for item in overrides:
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            value = yaml.safe_load(raw)
            target = self
            parts = key.split(".")
            for part in parts[:-1]:
                if not hasattr(target, part):
                    raise ConfigurationError(f"unknown config key {key!r}")
                target = getattr(target, part)
            leaf = parts[-1]
            if isinstance(target, dict):
                target[leaf] = value
            elif hasattr(target, leaf):
                setattr(target, leaf, value)
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        return self


def _dataclass_from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected mapping for {cls.__name__}, got {data!r}")
    kwargs = {}
    names = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {key!r} for {cls.__name__}")
        f = names[key]
        sub = {"schedule": TrainSchedule, "hmc": HmcConfig, "eval": EvalSpec}.get(key)
        kwargs[key] = _dataclass_from_dict(sub, value) if sub and isinstance(value, dict) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


@dataclass
class ErrorReport:
    rel_l2: float
    l_inf: float
    slice_times: list
    per_slice_rel_l2: list
    per_slice_l_inf: list
    n_points: int
    wall_s: float = 0.0
    absolute_l2: bool = False  # set when the exact norm vanished


def _plot_times(problem: PdeProblem, plot_dt: float) -> list[float]:
    times = []
    t = problem.t0
    while t < problem.T - 1e-9:
        times.append(round(t, 12))
        t = problem.t0 + (len(times)) * plot_dt
    times.append(problem.T)  # always end at the horizon exactly
    return times


def eval_grid(problem: PdeProblem, spec: EvalSpec) -> PointSet:
    """Space-time evaluation points: per-slice tensor grid for d <= 3,
    seeded uniform clouds for higher dimensions."""
    times = _plot_times(problem, spec.plot_dt)
    d = problem.d
    if d <= 3:
        per_axis = spec.per_axis or (64 if d == 2 else 32)
        n_slice = per_axis**d
        axes = [np.linspace(problem.lo[i], problem.hi[i], per_axis) for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        x = np.column_stack([m.ravel() for m in mesh])
    else:
        n_slice = spec.n_random
        rng = np.random.default_rng(spec.seed)
        x = rng.uniform(problem.lo, problem.hi, size=(n_slice, d))
    total = n_slice * len(times)
    if total > spec.cap:
        raise ConfigurationError(f"evaluation grid has {total} points, cap is {spec.cap}")
    parts = [np.concatenate([x, np.full((n_slice, 1), t)], axis=1) for t in times]
    return PointSet(points=np.concatenate(parts, axis=0), kind="interior")


def _chunked_values(net, pts, chunk=65536):
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        out[i : i + chunk] = nets.forward_values(net, pts[i : i + chunk])
    return out


def compute_errors(net, problem: PdeProblem, grid: PointSet) -> ErrorReport:
    """Relative L2 and absolute L-infinity errors against the closed form,
    jointly over the grid and per time slice."""
    pts = grid.points
    pred = _chunked_values(net, pts)
    exact = problem.exact(pts)
    diff = pred - exact
    norm = float(np.linalg.norm(exact))
    absolute = norm == 0.0
    rel_l2 = float(np.linalg.norm(diff)) / (1.0 if absolute else norm)
    l_inf = float(np.max(np.abs(diff)))
    slice_times, per_rel, per_inf = [], [], []
    for t in np.unique(pts[:, -1]):
        m = pts[:, -1] == t
        sn = float(np.linalg.norm(exact[m]))
        per_rel.append(float(np.linalg.norm(diff[m])) / (sn if sn else 1.0))
        per_inf.append(float(np.max(np.abs(diff[m]))))
        slice_times.append(float(t))
    return ErrorReport(
        rel_l2=rel_l2, l_inf=l_inf, slice_times=slice_times,
        per_slice_rel_l2=per_rel, per_slice_l_inf=per_inf,
        n_points=len(pts), absolute_l2=absolute,
    )


def default_band(problem: PdeProblem) -> float:
    """Front band width: ten times the problem's sharpness scale."""
    if hasattr(problem, "alpha"):
        return 10.0 * problem.alpha
    return 10.0 * problem.sigma**2


def front_concentration(traj: Trajectory, problem: PdeProblem, band: float) -> np.ndarray:
    """Per-slice fraction of adaptive points within ``band`` of the front."""
    if problem.id not in PROBLEM_IDS:
        raise ConfigurationError(f"unknown problem {problem.id!r}")
    fracs = []
    for t, x in zip(traj.times, traj.slices):
        phi = problem.front_functional(x, t)
        fracs.append(float(np.mean(np.abs(phi) <= band)))
    return np.asarray(fracs)


# -- runs and tables ------------------------------------------------------


def solve_run(cfg: RunConfig):
    """Train one method, evaluate it, and write artifacts if requested."""
    cfg.validate()
    problem = make_problem(cfg.problem, **cfg.problem_overrides)
    wall0 = time.perf_counter()
    result = run_method(
        cfg.method, problem, cfg.schedule, cfg.seed, window=cfg.window, hmc=cfg.hmc
    )
    grid = eval_grid(problem, cfg.eval)
    report = compute_errors(result.net, problem, grid)
    report.wall_s = time.perf_counter() - wall0
    if cfg.out:
        _write_artifacts(cfg, problem, result, report)
    return result, report


def _fmt(v) -> str:
    return "%.17g" % v if isinstance(v, float) else str(v)


def _write_artifacts(cfg: RunConfig, problem, result: RunResult, report: ErrorReport):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "code_version": __version__,
        "problem": problem.id,
        "method": result.method,
        "solution_steps": result.solution_steps,
        "flags": result.flags,
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    save_checkpoint(result.net, out / "solution.ckpt")
    if result.potential is not None:
        save_checkpoint(result.potential, out / "potential.ckpt")
    if result.trajectory is not None:
        (out / f"samples_{len(result.trajectory)}.csv").write_text(result.trajectory.to_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["problem", "method", "t", "rel_l2", "l_inf"])
    for t, r2, li in zip(report.slice_times, report.per_slice_rel_l2, report.per_slice_l_inf):
        w.writerow([problem.id, result.method, _fmt(t), _fmt(r2), _fmt(li)])
    (out / "per_slice_errors.csv").write_text(buf.getvalue())


def _row(cfg: RunConfig, result: RunResult, report: ErrorReport) -> dict:
    return {
        "problem": cfg.problem,
        "method": cfg.method,
        "rel_l2": report.rel_l2,
        "l_inf": report.l_inf,
        "epochs": result.solution_steps,
        "points_per_slice": cfg.schedule.interior_per_slice,
        "peak_train_points": result.peak_train_points,
        "wall_s": report.wall_s,
    }


def compare(configs, out=None) -> list[dict]:
    """Run each config under equal budgets and emit the comparison table.

    Refuses mixed budgets: all schedules must agree on total solution
    epochs and interior points per slice.
    """
    configs = [c.validate() for c in configs]
    totals = {c.schedule.total_solution_epochs for c in configs}
    slices = {c.schedule.interior_per_slice for c in configs}
    if len(totals) != 1 or len(slices) != 1:
        raise ConfigurationError("refusing to compare runs with mismatched budgets")
    rows = []
    for cfg in configs:
        result, report = solve_run(cfg)
        rows.append(_row(cfg, result, report))
    rows.sort(key=lambda r: (r["problem"], r["method"]))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "errors.csv").write_text(errors_csv(rows))
    return rows


def errors_csv(rows) -> str:
    lines = [ERRORS_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) for k in ERRORS_HEADER.split(",")))
    return "\n".join(lines) + "\n"


# -- self-check reports (CLI: check-gradients, hmc-diag) ------------------


def gradient_check_report(seed: int = 0, n_cases: int = 1000) -> dict:
    """Finite-difference audit of the jet derivatives and parameter
    gradients on random networks and points."""
    rng = np.random.default_rng(seed)
    n_nets = 8
    per_net = -(-n_cases // n_nets)
    max_grad = max_lap = max_param = 0.0
    cases = 0
    for i in range(n_nets):
        dim = int(rng.integers(2, 5))
        width = int(rng.integers(8, 24))
        net = init_dense_net((dim, width, width, 1), seed=int(rng.integers(1 << 31)))
        pts = rng.uniform(-1.0, 1.0, size=(per_net, dim))
        jets = nets.forward_jets(net, pts, n_spatial=dim - 1)
        h = 1e-4
        lap_fd = np.zeros(per_net)
        for k in range(dim):
            pp, pm = pts.copy(), pts.copy()
            pp[:, k] += h
            pm[:, k] -= h
            fp, fm = nets.forward_values(net, pp), nets.forward_values(net, pm)
            gfd = (fp - fm) / (2 * h)
            max_grad = max(
                max_grad,
                float(np.max(np.abs(jets.grad[:, k] - gfd) / (np.abs(gfd) + 1.0))),
            )
            if k < dim - 1:
                lap_fd += (fp - 2 * jets.value + fm) / h**2
        max_lap = max(
            max_lap, float(np.max(np.abs(jets.lap_x - lap_fd) / (np.abs(lap_fd) + 1.0)))
        )
        # parameter gradient of a quadratic loss on the same batch

        def loss_fn(j):
            n = len(j.value)
            loss = np.mean(j.value**2) + np.mean(j.lap_x**2)
            return loss, (2.0 / n) * j.value, None, (2.0 / n) * j.lap_x

        _, g = nets.loss_and_param_grad(net, pts, loss_fn, n_spatial=dim - 1)
        p0 = net.get_params()
        for k in rng.choice(net.n_params, size=6, replace=False):
            eps = 1e-6
            for sgn, store in ((1, "p"), (-1, "m")):
                pk = p0.copy()
                pk[k] += sgn * eps
                net.set_params(pk)
                j = nets.forward_jets(net, pts, n_spatial=dim - 1)
                val = np.mean(j.value**2) + np.mean(j.lap_x**2)
                if sgn == 1:
                    lp = val
                else:
                    lm = val
            net.set_params(p0)
            fd = (lp - lm) / (2 * eps)
            max_param = max(max_param, abs(g[k] - fd) / (abs(fd) + 1.0))
        cases += per_net
    report = {
        "seed": seed,
        "n_cases": cases,
        "max_rel_grad": float(max_grad),
        "max_rel_lap": float(max_lap),
        "max_rel_param": float(max_param),
        "tol_jets": 1e-5,
        "tol_params": 1e-4,
    }
    report["passed"] = bool(
        max_grad < 1e-5 and max_lap < 1e-5 and max_param < 1e-4
    )
    return report


def hmc_diagnostics(seed: int = 0, n: int = 4000) -> dict:
    """Sampler health: 1D Gaussian moments and a chi-square histogram test."""

    def logp_and_grad(x):
        return -0.5 * (x * x).sum(axis=1), -x

    cfg = HmcConfig(n_chains=16, burn_in=300, seed=seed, step_size=0.5, thin=4)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((cfg.n_chains, 1))
    draws = hmc_chains(logp_and_grad, x0, cfg, n_keep=n)[:, 0]
    edges = stats.norm.ppf(np.linspace(0.0, 1.0, 13)[1:-1])
    edges = np.concatenate([[-np.inf], edges, [np.inf]])
    counts, _ = np.histogram(draws, bins=edges)
    chi2 = stats.chisquare(counts)
    return {
        "seed": seed,
        "n": len(draws),
        "mean": float(draws.mean()),
        "var": float(draws.var()),
        "chi2_p": float(chi2.pvalue),
        "passed": bool(
            abs(draws.mean()) < 0.05
            and abs(draws.var() - 1.0) < 0.15
            and chi2.pvalue > 0.01
        ),
    }
