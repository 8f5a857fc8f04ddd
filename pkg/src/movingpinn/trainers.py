"""Training regimes: fixed-sample baseline, full-domain moving samples (MSM),
progressive time extension (PMSM), and its windowed-reset variant (WR-PMSM).

One engine implements both progressive variants; the unwindowed run is the
window-never-binds special case, so matched seeds give bit-identical metric
streams whenever the window does not bind.
"""

from __future__ import annotations

import time
import warnings
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .nets import DenseNet, NumericError
from .optim import AdamState, adam_step
from .problems import PdeProblem, residual_data_batch
from .sampling import HmcConfig, PointSet, hmc_sample, uniform_boundary, uniform_initial, uniform_interior
from .transport import (
    Trajectory,
    VelocityField,
    evolve_points,
    msm_velocity_loss_grad,
    neumann_penalty_grad,
    velocity_loss_grad,
)

__all__ = [
    "TrainingDiverged",
    "TimeGrids",
    "TrainSchedule",
    "CollocationSets",
    "ReferenceModel",
    "RunResult",
    "published_schedule",
    "pinn_loss",
    "train_pinn_baseline",
    "run_msm",
    "run_pmsm",
    "run_wr_pmsm",
    "match_budgets",
    "SOLUTION_HIDDEN",
    "POTENTIAL_HIDDEN",
]

SOLUTION_HIDDEN = (64, 64, 64)
POTENTIAL_HIDDEN = (256,)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the stage where it happened."""

    def __init__(self, stage, step, cause=None):
        super().__init__(f"training diverged in stage {stage!r} at step {step}")
        self.stage = stage
        self.step = step
        self.cause = cause


@dataclass
class TimeGrids:
    """Global rollout axis and the active training window.

    ``window`` = 0 keeps the training axis equal to the global axis;
    otherwise only the most recent ``window`` slices are retained for
    extension-stage training.
    """

    dt: float = 0.05
    t0: float = 0.0
    nt_init: int = 2
    window: int = 0
    global_times: list[float] = field(default_factory=list)
    train_times: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.nt_init < 2:
            raise ValueError("need at least two initial slices")
        if self.window and self.window < self.nt_init:
            raise ValueError("window must be >= nt_init")
        if not self.global_times:
            self.global_times = [self.t0 + k * self.dt for k in range(self.nt_init)]
            self.train_times = list(self.global_times)

    def append_slice(self) -> float:
        t_new = self.t0 + len(self.global_times) * self.dt
        self.global_times.append(t_new)
        self.train_times.append(t_new)
        while self.window and len(self.train_times) > self.window:
            self.train_times.pop(0)
        return t_new


def compute_k_ext(T: float, t0: float, dt: float, nt_init: int) -> int:
    """Number of one-slice extension rounds to land the grid exactly on T."""
    raw = (T - nt_init * dt - t0) / dt + 1.0
    k = int(round(raw))
    if abs(raw - k) > 1e-6:
        raise ValueError(
            f"horizon T={T} is not commensurate with dt={dt}, nt_init={nt_init}"
        )
    return k


@dataclass
class TrainSchedule:
    """Epoch budgets, point counts, and loss weights for one run."""

    epochs_pretrain: int = 7500
    epochs_per_round: int = 1500  # solution epochs per extension round
    epochs_velocity: int = 500  # velocity epochs per round (and per MSM iter)
    epochs_final: int = 15000
    k_ext: int = 20
    n_adaptive: int = 500
    n_uniform: int = 1000
    n_initial: int = 500
    n_boundary: int = 200
    lambda0: float = 1.0
    lambda_b: float = 1.0
    lambda_neumann: float = 1.0
    lr_solution: float = 1e-3
    lr_velocity: float = 1e-3
    minibatch: int = 0  # 0 = full batch
    msm_iterations: int = 5
    h_fd: float = 1e-4
    eval_every: int = 50

    @property
    def total_solution_epochs(self) -> int:
        return self.epochs_pretrain + self.k_ext * self.epochs_per_round + self.epochs_final

    @property
    def interior_per_slice(self) -> int:
        return self.n_adaptive + self.n_uniform


_PUBLISHED = {
    "burgers2d": dict(
        epochs_pretrain=7500, epochs_per_round=1500, epochs_final=15000,
        k_ext=20, n_adaptive=500, n_uniform=1000, n_initial=500,
    ),
    "parabolic2d": dict(
        epochs_pretrain=7500, epochs_per_round=1500, epochs_final=15000,
        k_ext=30, n_adaptive=500, n_uniform=500, n_initial=500,
    ),
    "fokker_planck3d": dict(
        epochs_pretrain=30000, epochs_per_round=6000, epochs_final=60000,
        k_ext=18, n_adaptive=1000, n_uniform=2500, n_initial=1000,
    ),
    "burgers6d": dict(
        epochs_pretrain=7500, epochs_per_round=1500, epochs_final=15000,
        k_ext=20, n_adaptive=500, n_uniform=1000, n_initial=500,
    ),
}

_NT_INIT = {"burgers2d": 2, "parabolic2d": 2, "fokker_planck3d": 6, "burgers6d": 2}


def published_schedule(problem_id: str) -> TrainSchedule:
    """The full-budget schedule used for each benchmark."""
    return TrainSchedule(**_PUBLISHED[problem_id])


def nt_init_for(problem_id: str) -> int:
    return _NT_INIT[problem_id]


@dataclass
class CollocationSets:
    """The point collections entering the solution-network loss."""

    interior: np.ndarray  # uniform PDE points, (n, d+1)
    adaptive: np.ndarray | None  # transported points, (m, d+1) or None
    initial_x: np.ndarray  # spatial IC points, (n0, d)
    ic_time: float
    ic_values: np.ndarray  # supervision targets at (initial_x, ic_time)
    boundary: np.ndarray  # (nb, d+1)
    bc_values: np.ndarray

    def interior_all(self) -> np.ndarray:
        if self.adaptive is None or len(self.adaptive) == 0:
            return self.interior
        return np.concatenate([self.interior, self.adaptive], axis=0)


@dataclass
class ReferenceModel:
    """Frozen solution-net clone anchoring the window-start IC supervision."""

    net: DenseNet
    t_start: float

    def values(self, x: np.ndarray) -> np.ndarray:
        pts = np.concatenate([x, np.full((len(x), 1), self.t_start)], axis=1)
        return nets.forward_values(self.net, pts)


@dataclass
class RunResult:
    method: str
    net: DenseNet
    potential: DenseNet | None
    trajectory: Trajectory | None
    loss_history: list
    solution_steps: int
    round_interior_counts: list
    peak_train_points: int
    wall_s: float
    flags: list = field(default_factory=list)


def _subseed(seed: int, *tags) -> int:
    # zlib.crc32 is stable across processes, unlike the salted builtin hash
    h = [seed] + [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(h).generate_state(1)[0])


def pinn_loss(net: DenseNet, sets: CollocationSets, problem: PdeProblem, weights=None) -> float:
    """Weighted squared-residual objective: interior + IC + BC terms."""
    lam0, lamb = weights if weights is not None else (1.0, 1.0)
    interior = sets.interior_all()
    if len(interior) == 0:
        raise ValueError("empty interior collocation set")
    jets = nets.forward_jets(net, interior, n_spatial=problem.d)
    r = problem.residual_from_jets(jets, interior)
    loss = float(np.mean(r * r))
    if len(sets.initial_x) == 0:
        warnings.warn("empty initial set; IC term dropped")
    else:
        pts0 = np.concatenate(
            [sets.initial_x, np.full((len(sets.initial_x), 1), sets.ic_time)], axis=1
        )
        du = nets.forward_values(net, pts0) - sets.ic_values
        loss += lam0 * float(np.mean(du * du))
    if len(sets.boundary) == 0:
        warnings.warn("empty boundary set; BC term dropped")
    else:
        db = nets.forward_values(net, sets.boundary) - sets.bc_values
        loss += lamb * float(np.mean(db * db))
    return loss


def _solution_grad(net, problem, sets, lam0, lamb, interior):
    """Total PINN loss and its parameter gradient on the given interior batch."""

    def interior_loss(jets):
        r = problem.residual_from_jets(jets, interior)
        n = len(r)
        dv, dgrad, dlap = problem.residual_jet_partials(jets, interior)
        scale = (2.0 / n) * r
        return np.mean(r * r), scale * dv, scale[:, None] * dgrad, scale * dlap

    loss, grad = nets.loss_and_param_grad(net, interior, interior_loss, n_spatial=problem.d)
    if len(sets.initial_x):
        pts0 = np.concatenate(
            [sets.initial_x, np.full((len(sets.initial_x), 1), sets.ic_time)], axis=1
        )

        def ic_loss(values):
            du = values - sets.ic_values
            return float(np.mean(du * du)), 2.0 * du / len(du)

        l0, g0 = nets.value_loss_and_param_grad(net, pts0, ic_loss)
        loss += lam0 * l0
        grad += lam0 * g0
    if len(sets.boundary):

        def bc_loss(values):
            db = values - sets.bc_values
            return float(np.mean(db * db)), 2.0 * db / len(db)

        lb, gb = nets.value_loss_and_param_grad(net, sets.boundary, bc_loss)
        loss += lamb * lb
        grad += lamb * gb
    return loss, grad


class _Run:
    """Shared state and loops for all four training regimes."""

    def __init__(self, problem, schedule, seed, grids=None, hmc=None):
        self.problem = problem
        self.schedule = schedule
        self.seed = seed
        self.grids = grids or TimeGrids(nt_init=nt_init_for(problem.id))
        self.hmc = hmc or HmcConfig()
        self.net = nets.init_dense_net(
            (problem.d + 1, *SOLUTION_HIDDEN, 1), seed=_subseed(seed, "solution")
        )
        self.potential = nets.init_dense_net(
            (problem.d + 1, *POTENTIAL_HIDDEN, 1), seed=_subseed(seed, "potential")
        )
        self.field = VelocityField(self.potential)
        self.adam_u = AdamState(self.net.n_params, lr=schedule.lr_solution)
        self.adam_v = AdamState(self.potential.n_params, lr=schedule.lr_velocity)
        self.batch_rng = np.random.default_rng(_subseed(seed, "minibatch"))
        self.loss_history = []
        self.solution_steps = 0
        self.round_interior_counts = []
        self.flags = []
        self.reference: ReferenceModel | None = None
        self._seed_points()

    # -- seeding ----------------------------------------------------------

    def _seed_points(self):
        s = self.schedule
        cfg = replace(self.hmc, seed=_subseed(self.seed, "hmc"))
        draws = hmc_sample(self.problem, cfg, s.n_initial + s.n_adaptive)
        x = draws.points[:, : self.problem.d]
        c0 = x[: s.n_initial].copy()
        self.z0 = x[s.n_initial : s.n_initial + s.n_adaptive].copy()
        n_mix = int(round(cfg.uniform_mix * len(c0)))
        if n_mix:
            mix = uniform_initial(self.problem, n_mix, _subseed(self.seed, "icmix"))
            c0[:n_mix] = mix.points[:, : self.problem.d]
        self.ic_x = c0
        self.ic_analytic = self.problem.initial(c0)

    # -- collocation construction -----------------------------------------

    def _uniform_sets(self, times, tag):
        s = self.schedule
        su = uniform_interior(self.problem, s.n_uniform, times, _subseed(self.seed, "su", tag))
        sb = uniform_boundary(self.problem, s.n_boundary, times, _subseed(self.seed, "sb", tag))
        return su, sb

    def _sets(self, su, sb, adaptive, ic_time, ic_values):
        return CollocationSets(
            interior=su.points,
            adaptive=adaptive,
            initial_x=self.ic_x,
            ic_time=ic_time,
            ic_values=ic_values,
            boundary=sb.points,
            bc_values=self.problem.boundary(sb.points),
        )

    # -- training loops ---------------------------------------------------

    def train_solution(self, sets: CollocationSets, epochs: int, stage: str):
        s = self.schedule
        interior = sets.interior_all()
        params = self.net.get_params()
        for _ in range(epochs):
            if s.minibatch and s.minibatch < len(interior):
                idx = self.batch_rng.choice(len(interior), size=s.minibatch, replace=False)
                batch = interior[idx]
            else:
                batch = interior
            try:
                loss, grad = _solution_grad(
                    self.net, self.problem, sets, s.lambda0, s.lambda_b, batch
                )
            except NumericError as exc:
                raise TrainingDiverged(stage, self.solution_steps, exc) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(stage, self.solution_steps)
            params = adam_step(self.adam_u, params, grad)
            self.net.set_params(params)
            self.solution_steps += 1
            if self.solution_steps % s.eval_every == 0:
                self.loss_history.append((self.solution_steps, loss))

    def train_velocity(self, res_batch, boundary_ps, epochs: int, stage: str, msm_pairs=None):
        s = self.schedule
        params = self.potential.get_params()
        snapshot = params.copy()
        adam_snapshot = AdamState(
            self.adam_v.n_params, lr=self.adam_v.lr, step=self.adam_v.step,
            m=self.adam_v.m.copy(), v=self.adam_v.v.copy(),
        )
        try:
            for _ in range(epochs):
                if msm_pairs is not None:
                    loss, grad = msm_velocity_loss_grad(self.field, msm_pairs, self.grids.dt)
                else:
                    loss, grad = velocity_loss_grad(self.field, res_batch)
                if boundary_ps is not None and self.problem.needs_velocity_neumann:
                    lp, gp = neumann_penalty_grad(self.field, boundary_ps)
                    loss += s.lambda_neumann * lp
                    grad += s.lambda_neumann * gp
                if not np.isfinite(loss):
                    raise NumericError("velocity loss diverged")
                params = adam_step(self.adam_v, params, grad)
                self.potential.set_params(params)
        except NumericError:
            # roll the field back to its state before this stage
            self.potential.set_params(snapshot)
            self.adam_v = adam_snapshot
            self.flags.append(f"velocity rollback in {stage}")

    # -- pieces shared by the moving-sample regimes ------------------------

    def residuals_at(self, spatial_slices, times):
        """Frozen-net residual data at the given per-slice spatial points."""
        parts = []
        for x, t in zip(spatial_slices, times):
            pts = np.concatenate([x, np.full((len(x), 1), float(t))], axis=1)
            parts.append(pts)
        allpts = np.concatenate(parts, axis=0)
        return residual_data_batch(self.problem, self.net, allpts, h_fd=self.schedule.h_fd)

    def velocity_boundary(self, times, tag):
        if not self.problem.needs_velocity_neumann:
            return None
        return uniform_boundary(
            self.problem, self.schedule.n_boundary, times, _subseed(self.seed, "vb", tag)
        )

    def su_slice_points(self, su: PointSet, t: float) -> np.ndarray:
        mask = su.points[:, -1] == t
        return su.points[mask][:, : self.problem.d]


def _result(method, run: _Run, trajectory, wall0, potential=True) -> RunResult:
    counts = run.round_interior_counts
    return RunResult(
        method=method,
        net=run.net,
        potential=run.potential if potential else None,
        trajectory=trajectory,
        loss_history=run.loss_history,
        solution_steps=run.solution_steps,
        round_interior_counts=counts,
        peak_train_points=max(counts) if counts else 0,
        wall_s=time.perf_counter() - wall0,
        flags=run.flags,
    )


def train_pinn_baseline(problem, schedule, seed, grids=None, hmc=None) -> RunResult:
    """Fixed uniform collocation over the full grid, matched epoch total."""
    wall0 = time.perf_counter()
    run = _Run(problem, schedule, seed, grids, hmc)
    g = run.grids
    k_ext = schedule.k_ext
    while len(g.global_times) < g.nt_init + k_ext:
        g.global_times.append(g.t0 + len(g.global_times) * g.dt)
    g.train_times = list(g.global_times)
    s = schedule
    su = uniform_interior(
        problem, s.interior_per_slice, g.global_times, _subseed(seed, "su", "pinn")
    )
    sb = uniform_boundary(problem, s.n_boundary, g.global_times, _subseed(seed, "sb", "pinn"))
    sets = run._sets(su, sb, None, g.t0, run.ic_analytic)
    run.round_interior_counts.append(len(su))
    run.train_solution(sets, s.total_solution_epochs, "pinn")
    return _result("pinn", run, None, wall0, potential=False)


def _extension_engine(method, problem, schedule, seed, window, grids=None, hmc=None) -> RunResult:
    """Progressive time extension; window=0 reproduces the unwindowed run."""
    wall0 = time.perf_counter()
    grids = grids or TimeGrids(nt_init=nt_init_for(problem.id), window=window)
    grids.window = window
    run = _Run(problem, schedule, seed, grids, hmc)
    g, s = grids, schedule
    dt = g.dt

    # initial stage on the first nt_init slices
    su, sb = run._uniform_sets(g.train_times, "init")
    traj = Trajectory()
    traj.append(g.t0, run.z0, "final")
    sets = run._sets(su, sb, traj.as_points(g.train_times), g.t0, run.ic_analytic)
    run.train_solution(sets, s.epochs_pretrain, "pretrain")
    res = run.residuals_at(
        [run.su_slice_points(su, t) for t in g.train_times], g.train_times
    )
    run.train_velocity(res, run.velocity_boundary(g.train_times, "init"), s.epochs_velocity, "pretrain")
    for t in g.train_times[1:]:
        traj.append(t, evolve_points(run.field, traj.slices[-1], t - dt, dt, problem), "final")

    ic_time, ic_values = g.t0, run.ic_analytic
    prev_min = g.train_times[0]
    for j in range(1, s.k_ext + 1):
        t_new = g.append_slice()
        t_prev = t_new - dt
        traj.append(t_new, evolve_points(run.field, traj.slices[-1], t_prev, dt, problem), "temporary")
        if g.train_times[0] != prev_min:
            prev_min = g.train_times[0]
            run.reference = ReferenceModel(net=run.net.copy(), t_start=prev_min)
            ic_time = prev_min
            ic_values = run.reference.values(run.ic_x)
        su, sb = run._uniform_sets(g.train_times, f"round{j}")
        adaptive = traj.as_points(g.train_times)
        run.round_interior_counts.append(len(su) + len(adaptive))
        sets = run._sets(su, sb, adaptive, ic_time, ic_values)
        run.train_solution(sets, s.epochs_per_round, f"round{j}")
        pair_pts = [run.su_slice_points(su, t) for t in (t_prev, t_new)]
        res = run.residuals_at(pair_pts, (t_prev, t_new))
        run.train_velocity(
            res, run.velocity_boundary((t_prev, t_new), f"round{j}"), s.epochs_velocity, f"round{j}"
        )
        traj.replace_last(
            evolve_points(run.field, traj.slices[-2], t_prev, dt, problem), "final"
        )

    # final global refinement with the analytic initial condition
    g.train_times = list(g.global_times)
    su, sb = run._uniform_sets(g.global_times, "final")
    sets = run._sets(su, sb, traj.as_points(g.global_times), g.t0, run.ic_analytic)
    run.train_solution(sets, s.epochs_final, "final")
    return _result(method, run, traj, wall0)


def run_pmsm(problem, schedule, seed, grids=None, hmc=None) -> RunResult:
    return _extension_engine("pmsm", problem, schedule, seed, 0, grids, hmc)


def run_wr_pmsm(problem, schedule, seed, window, grids=None, hmc=None) -> RunResult:
    if window < 0:
        raise ValueError("window must be >= 0")
    return _extension_engine("wr_pmsm", problem, schedule, seed, window, grids, hmc)


def run_msm(problem, schedule, seed, grids=None, hmc=None) -> RunResult:
    """Full-time-domain iterative regime with the globally normalized loss."""
    wall0 = time.perf_counter()
    grids = grids or TimeGrids(nt_init=nt_init_for(problem.id))
    run = _Run(problem, schedule, seed, grids, hmc)
    g, s = grids, schedule
    dt = g.dt
    while len(g.global_times) < g.nt_init + s.k_ext:
        g.global_times.append(g.t0 + len(g.global_times) * g.dt)
    g.train_times = list(g.global_times)
    times = g.global_times

    su, sb = run._uniform_sets(times, "msm")
    sets = run._sets(su, sb, None, g.t0, run.ic_analytic)
    run.train_solution(sets, s.epochs_pretrain, "pretrain")

    # per-iteration solution epochs, distributed to keep the exact total
    total_iter_epochs = s.k_ext * s.epochs_per_round
    n_iter = max(1, s.msm_iterations)
    per_iter = [total_iter_epochs // n_iter] * n_iter
    for i in range(total_iter_epochs - sum(per_iter)):
        per_iter[i] += 1

    traj = None
    slice_x = [run.su_slice_points(su, t) for t in times]
    for it, epochs in enumerate(per_iter):
        pairs = []
        for i in range(len(times) - 1):
            res_a = run.residuals_at([slice_x[i]], [times[i]])
            res_b = run.residuals_at([slice_x[i]], [times[i + 1]])
            pairs.append((res_a, res_b))
        run.train_velocity(
            None, run.velocity_boundary(times, f"msm{it}"), s.epochs_velocity,
            f"msm{it}", msm_pairs=pairs,
        )
        cfg = replace(run.hmc, seed=_subseed(seed, "msmz0", it))
        z0 = hmc_sample(problem, cfg, s.n_adaptive).points[:, : problem.d]
        traj = Trajectory()
        traj.append(times[0], z0, "final")
        for t in times[1:]:
            traj.append(t, evolve_points(run.field, traj.slices[-1], t - dt, dt, problem), "final")
        adaptive = traj.as_points(times)
        run.round_interior_counts.append(len(su) + len(adaptive))
        sets = run._sets(su, sb, adaptive, g.t0, run.ic_analytic)
        run.train_solution(sets, epochs, f"msm{it}")

    sets = run._sets(su, sb, traj.as_points(times) if traj else None, g.t0, run.ic_analytic)
    run.train_solution(sets, s.epochs_final, "final")
    return _result("msm", run, traj, wall0)


METHODS = ("pinn", "msm", "pmsm", "wr_pmsm")


def match_budgets(schedule: TrainSchedule) -> dict:
    """Equalized per-method budgets: same solution epochs, same interior
    points per slice, for fair comparison across all four regimes."""
    total = schedule.total_solution_epochs
    per_slice = schedule.interior_per_slice
    budgets = {}
    for method in METHODS:
        budgets[method] = {
            "total_epochs": total,
            "interior_per_slice": per_slice,
            "schedule": schedule,
        }
    totals = {b["total_epochs"] for b in budgets.values()}
    slices = {b["interior_per_slice"] for b in budgets.values()}
    if len(totals) != 1 or len(slices) != 1:
        raise ValueError("budget equalization failed")
    return budgets


def run_method(method, problem, schedule, seed, window=10, grids=None, hmc=None) -> RunResult:
    if method == "pinn":
        return train_pinn_baseline(problem, schedule, seed, grids, hmc)
    if method == "msm":
        return run_msm(problem, schedule, seed, grids, hmc)
    if method == "pmsm":
        return run_pmsm(problem, schedule, seed, grids, hmc)
    if method == "wr_pmsm":
        return run_wr_pmsm(problem, schedule, seed, window, grids, hmc)
    raise ValueError(f"unknown method {method!r}")
