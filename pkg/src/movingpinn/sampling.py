"""Collocation point generation.

Uniform interior/boundary/initial sets, plus Hamiltonian Monte Carlo draws
from the initial-condition-induced seed densities with Metropolis-Hastings
correction. All samplers are seeded and deterministic in single-threaded
mode.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .problems import PdeProblem

__all__ = [
    "DiagnosticsError",
    "HmcConfig",
    "PointSet",
    "uniform_interior",
    "uniform_boundary",
    "uniform_initial",
    "log_density_ic",
    "hmc_sample",
    "hmc_chains",
]


class DiagnosticsError(RuntimeError):
    """Sampler failed a health check (e.g. collapsed acceptance rate)."""


POINT_KINDS = ("interior", "initial", "boundary", "adaptive")


@dataclass
class PointSet:
    """A collection of space-time points of one kind.

    ``points`` has shape (n, d+1) with columns (x_1..x_d, t). Boundary sets
    carry a ``faces`` tag per point: face index 2*axis + (0 for the low
    face, 1 for the high face).
    """

    points: np.ndarray
    kind: str
    faces: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in POINT_KINDS:
            raise ValueError(f"unknown point kind {self.kind!r}")
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))

    def __len__(self):
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1] - 1

    def to_csv(self) -> str:
        """Delimited dump: header ``t,x1..xd,kind``, 17 significant digits."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(self.d)] + ["kind"])
        for row in self.points:
            writer.writerow(
                ["%.17g" % row[-1]] + ["%.17g" % v for v in row[:-1]] + [self.kind]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PointSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) - 2
        pts = np.empty((len(body), d + 1))
        kind = body[0][-1] if body else "interior"
        for i, row in enumerate(body):
            pts[i, -1] = float(row[0])
            pts[i, :-1] = [float(v) for v in row[1 : 1 + d]]
        return cls(points=pts, kind=kind)


def _with_times(x_slices: list[np.ndarray], times) -> np.ndarray:
    parts = []
    for x, t in zip(x_slices, times):
        parts.append(np.concatenate([x, np.full((len(x), 1), float(t))], axis=1))
    if not parts:
        return np.empty((0, 0))
    return np.concatenate(parts, axis=0)


def uniform_interior(problem: PdeProblem, n_per_slice: int, times, seed: int) -> PointSet:
    """Fresh i.i.d. uniform spatial draws in the box, per time slice."""
    rng = np.random.default_rng(seed)
    times = list(times)
    slices = [
        rng.uniform(problem.lo, problem.hi, size=(n_per_slice, problem.d)) for _ in times
    ]
    pts = _with_times(slices, times)
    if pts.size == 0:
        pts = np.empty((0, problem.d + 1))
    return PointSet(points=pts, kind="interior")


def boundary_spatial(problem: PdeProblem, n: int, seed: int):
    """n spatial points on the box boundary with their face tags.

    Faces are chosen with probability proportional to their (d-1)-measure,
    then the point is uniform on the face.
    """
    rng = np.random.default_rng(seed)
    ext = problem.hi - problem.lo
    face_measure = np.repeat([np.prod(np.delete(ext, i)) for i in range(problem.d)], 2)
    probs = face_measure / face_measure.sum()
    faces = rng.choice(2 * problem.d, size=n, p=probs)
    x = rng.uniform(problem.lo, problem.hi, size=(n, problem.d))
    axis = faces // 2
    side = faces % 2
    vals = np.where(side == 1, problem.hi[axis], problem.lo[axis])
    x[np.arange(n), axis] = vals
    return x, faces


def uniform_boundary(problem: PdeProblem, n_per_slice: int, times, seed: int) -> PointSet:
    """Boundary set: one spatial draw on the faces, repeated over all slices."""
    times = list(times)
    x, faces = boundary_spatial(problem, n_per_slice, seed)
    pts = _with_times([x] * len(times), times)
    if pts.size == 0:
        pts = np.empty((0, problem.d + 1))
        all_faces = np.empty(0, dtype=int)
    else:
        all_faces = np.tile(faces, len(times))
    return PointSet(points=pts, kind="boundary", faces=all_faces)


def uniform_initial(problem: PdeProblem, n: int, seed: int) -> PointSet:
    rng = np.random.default_rng(seed)
    x = rng.uniform(problem.lo, problem.hi, size=(n, problem.d))
    pts = np.concatenate([x, np.full((n, 1), problem.t0)], axis=1)
    return PointSet(points=pts, kind="initial")


def log_density_ic(problem: PdeProblem, x: np.ndarray, eps: float):
    """Unnormalized seed log-density and spatial gradient; -inf outside."""
    return problem.log_density_ic(x, eps)


@dataclass
class HmcConfig:
    n_chains: int = 16
    burn_in: int = 500
    leapfrog_steps: int = 10
    step_size: float = 0.1
    target_accept: float = 0.75
    epsilon_floor: float = 1e-4
    seed: int = 0
    thin: int = 1
    adapt_rate: float = 0.05
    # relative step jitter per iteration; breaks leapfrog resonances
    step_jitter: float = 0.2
    min_accept_rate: float = 0.05
    # fraction of C0 replaced by uniform draws, and the C0/Z0 split ratio
    uniform_mix: float = 0.1
    split: float = 0.5

    def __post_init__(self):
        if self.epsilon_floor <= 0 or self.step_size <= 0:
            raise ValueError("epsilon_floor and step_size must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


def hmc_chains(logp_and_grad, x0: np.ndarray, cfg: HmcConfig, n_keep: int) -> np.ndarray:
    """Vectorized multi-chain HMC with leapfrog proposals.

    ``logp_and_grad(x) -> (logp, grad)`` on (n_chains, dim) arrays; -inf
    log-probabilities reject the proposal. Step sizes adapt per chain during
    burn-in toward ``cfg.target_accept`` and are frozen afterwards. Returns
    at least ``n_keep`` post-burn-in states, in draw order.
    """
    rng = np.random.default_rng(cfg.seed)
    x = np.array(x0, dtype=np.float64)
    n_chains, dim = x.shape
    logp, grad = logp_and_grad(x)
    step = np.full(n_chains, cfg.step_size)
    kept = []
    n_rounds = cfg.burn_in + cfg.thin * -(-n_keep // n_chains)
    n_acc = 0.0
    n_prop = 0
    for it in range(n_rounds):
        p0 = rng.standard_normal((n_chains, dim))
        eps = step * (1.0 + cfg.step_jitter * (2.0 * rng.uniform(size=n_chains) - 1.0))
        # leapfrog on H = -logp + |p|^2 / 2
        xq = x.copy()
        g = grad
        p = p0 + 0.5 * eps[:, None] * np.where(np.isfinite(g), g, 0.0)
        for leap in range(cfg.leapfrog_steps):
            xq = xq + eps[:, None] * p
            lp_new, g = logp_and_grad(xq)
            last = leap == cfg.leapfrog_steps - 1
            p = p + (0.5 if last else 1.0) * eps[:, None] * np.where(
                np.isfinite(g), g, 0.0
            )
        h0 = -logp + 0.5 * (p0 * p0).sum(axis=1)
        h1 = -lp_new + 0.5 * (p * p).sum(axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            acc_prob = np.where(
                np.isfinite(lp_new), np.minimum(1.0, np.exp(h0 - h1)), 0.0
            )
        accept = rng.uniform(size=n_chains) < acc_prob
        x = np.where(accept[:, None], xq, x)
        logp = np.where(accept, lp_new, logp)
        _, grad = logp_and_grad(x)
        if it < cfg.burn_in:
            step = step * np.exp(cfg.adapt_rate * (acc_prob - cfg.target_accept))
            step = np.clip(step, 1e-7 * cfg.step_size, 1e3 * cfg.step_size)
        else:
            n_acc += float(accept.sum())
            n_prop += n_chains
            if (it - cfg.burn_in) % cfg.thin == cfg.thin - 1:
                kept.append(x.copy())
    if n_prop and n_acc / n_prop < cfg.min_accept_rate:
        raise DiagnosticsError(
            f"HMC acceptance rate {n_acc / n_prop:.3f} below "
            f"{cfg.min_accept_rate}; reduce step_size or raise epsilon_floor"
        )
    return np.concatenate(kept, axis=0)


def hmc_sample(problem: PdeProblem, cfg: HmcConfig, n: int) -> PointSet:
    """n draws from the initial-condition seed density of the problem.

    Samples are shuffled and filtered to the closed box, then tagged as
    t=t0 initial points. Callers split them into the initial-condition set
    and the adaptive trajectory seeds.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    eps = cfg.epsilon_floor

    def logp_and_grad(x):
        return problem.log_density_ic(x, eps)

    rng = np.random.default_rng(cfg.seed)
    # Chains start at density-weighted draws from a uniform candidate pool so
    # that narrow high-density ridges are reached even when the density floor
    # creates a vast nearly-flat plateau.
    cand = rng.uniform(problem.lo, problem.hi, size=(4096, problem.d))
    logp, _ = logp_and_grad(cand)
    w = np.exp(logp - logp.max())
    idx = rng.choice(len(cand), size=cfg.n_chains, p=w / w.sum())
    x0 = cand[idx]
    draws = hmc_chains(logp_and_grad, x0, cfg, n_keep=n)
    draws = draws[problem.in_space(draws)]
    order = np.random.default_rng(cfg.seed + 1).permutation(len(draws))
    draws = draws[order][:n]
    pts = np.concatenate([draws, np.full((len(draws), 1), problem.t0)], axis=1)
    return PointSet(points=pts, kind="initial")
