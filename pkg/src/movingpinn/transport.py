"""Velocity potential and sample transport.

The transport velocity is the spatial gradient of a scalar potential
network (curl-free by construction); its divergence is the potential's
spatial Laplacian. This module holds the velocity losses for both the
slice-local and the globally normalized training objectives, the Neumann
boundary penalty that discourages outflow, and the explicit-Euler evolution
of the adaptive trajectories.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .nets import DenseNet, NumericError, forward_jets, loss_and_param_grad
from .problems import PdeProblem, ResidualBatch
from .sampling import PointSet

__all__ = [
    "AnalyticPotential",
    "VelocityField",
    "Trajectory",
    "velocity_at",
    "pmsm_velocity_loss",
    "msm_velocity_loss",
    "neumann_penalty",
    "velocity_loss_grad",
    "msm_velocity_loss_grad",
    "neumann_penalty_grad",
    "evolve_points",
    "evolve_slice",
    "density_pushforward_check",
]

MSM_NORM_FLOOR = 1e-12


@dataclass
class AnalyticPotential:
    """Closed-form potential for planted-field diagnostics.

    ``jets_fn(pts, n_spatial)`` must return a JetBatch of the potential;
    satisfies the small interface :func:`velocity_at` needs.
    """

    n_inputs: int
    jets_fn: object

    def jets(self, pts, n_spatial):
        return self.jets_fn(pts, n_spatial)


@dataclass
class VelocityField:
    """Curl-free velocity V(x,t) = grad_x psi(x,t) from a potential net."""

    potential: DenseNet | AnalyticPotential

    @property
    def d(self) -> int:
        return self.potential.n_inputs - 1


@dataclass
class Trajectory:
    """Per-slice arrays of the N adaptive points over the global time axis."""

    times: list[float] = field(default_factory=list)
    slices: list[np.ndarray] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)  # "temporary" | "final"

    def __len__(self):
        return len(self.slices)

    @property
    def n_points(self) -> int:
        return len(self.slices[0]) if self.slices else 0

    def append(self, t: float, x: np.ndarray, provenance: str = "final"):
        if provenance not in ("temporary", "final"):
            raise ValueError(f"bad provenance {provenance!r}")
        if self.slices and len(x) != self.n_points:
            raise ValueError("per-slice point count must stay constant")
        if self.times and not t > self.times[-1]:
            raise ValueError("slice times must be strictly increasing")
        self.times.append(float(t))
        self.slices.append(np.asarray(x, dtype=np.float64))
        self.provenance.append(provenance)

    def replace_last(self, x: np.ndarray, provenance: str = "final"):
        self.slices[-1] = np.asarray(x, dtype=np.float64)
        self.provenance[-1] = provenance

    def as_points(self, times=None) -> np.ndarray:
        """Space-time array over the given slice times (default: all)."""
        keep = set(float(t) for t in times) if times is not None else None
        parts = []
        for t, x in zip(self.times, self.slices):
            if keep is None or t in keep:
                parts.append(np.concatenate([x, np.full((len(x), 1), t)], axis=1))
        if not parts:
            return np.empty((0, (self.slices[0].shape[1] + 1) if self.slices else 0))
        return np.concatenate(parts, axis=0)

    def to_csv(self) -> str:
        """PointSet dump format plus a trailing ``provenance`` column."""
        d = self.slices[0].shape[1] if self.slices else 0
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["kind", "provenance"])
        for t, x, prov in zip(self.times, self.slices, self.provenance):
            for row in x:
                writer.writerow(
                    ["%.17g" % t] + ["%.17g" % v for v in row] + ["adaptive", prov]
                )
        return buf.getvalue()


def velocity_at(field: VelocityField, pts: np.ndarray):
    """(V, div V) at a batch of space-time points."""
    pts = np.atleast_2d(pts)
    if hasattr(field.potential, "jets"):
        jets = field.potential.jets(pts, field.d)
    else:
        jets = forward_jets(field.potential, pts, n_spatial=field.d)
    return jets.grad[:, : field.d], jets.lap_x


def _pmsm_integrand(jets, res: ResidualBatch, d: int):
    return (
        2.0 * res.dr_dt
        + 2.0 * np.einsum("bi,bi->b", res.grad_r, jets.grad[:, :d])
        + res.r * jets.lap_x
    )


def pmsm_velocity_loss(field: VelocityField, res: ResidualBatch) -> float:
    """Slice-local velocity loss: mean squared transport defect.

    Monte Carlo estimate of the integral of
    (2 dr/dt + 2 grad r . grad psi + r lap psi)^2 over the batch.
    """
    if len(res.r) == 0:
        raise ValueError("empty residual batch")
    jets = forward_jets(field.potential, res.points, n_spatial=field.d)
    g = _pmsm_integrand(jets, res, field.d)
    return float(np.mean(g * g))


def velocity_loss_grad(field: VelocityField, res: ResidualBatch):
    """(loss, parameter gradient) of :func:`pmsm_velocity_loss`."""
    d = field.d

    def loss_fn(jets):
        g = _pmsm_integrand(jets, res, d)
        n = len(g)
        loss = np.mean(g * g)
        bar_grad = np.zeros_like(jets.grad)
        bar_grad[:, :d] = (2.0 / n) * g[:, None] * 2.0 * res.grad_r
        bar_lap = (2.0 / n) * g * res.r
        return loss, None, bar_grad, bar_lap

    return loss_and_param_grad(field.potential, res.points, loss_fn, n_spatial=d)


def _msm_norm_terms(pair: tuple[ResidualBatch, ResidualBatch], dt: float):
    """Per-point normalization offsets -r * G / I for one slice pair.

    I = integral of r^2 at the first slice and G = d/dt integral of r^2 are
    both Monte Carlo means over the same spatial points, so the domain
    volume cancels. Returns (offsets, degenerate_flag); when I falls below
    the floor the term is dropped.
    """
    res_a, res_b = pair
    mean_a = float(np.mean(res_a.r**2))
    mean_b = float(np.mean(res_b.r**2))
    if mean_a < MSM_NORM_FLOOR:
        return np.zeros_like(res_a.r), True
    g_t = (mean_b - mean_a) / dt
    return -res_a.r * (g_t / mean_a), False


def msm_velocity_loss(field: VelocityField, pairs, dt: float):
    """Globally normalized velocity loss summed over consecutive slice pairs.

    ``pairs`` is a sequence of (ResidualBatch at t_i, ResidualBatch at
    t_{i+1}) computed at the same spatial points; the squared defect is
    evaluated at the first slice of each pair. Returns (loss, degenerate
    slice flags).
    """
    if not pairs:
        raise ValueError("need at least one slice pair")
    total = 0.0
    flags = []
    for pair in pairs:
        res_a = pair[0]
        jets = forward_jets(field.potential, res_a.points, n_spatial=field.d)
        offset, degenerate = _msm_norm_terms(pair, dt)
        g = _pmsm_integrand(jets, res_a, field.d) + offset
        total += float(np.mean(g * g))
        flags.append(degenerate)
    return total, flags


def msm_velocity_loss_grad(field: VelocityField, pairs, dt: float):
    """(loss, parameter gradient) of :func:`msm_velocity_loss`."""
    d = field.d
    total = 0.0
    grad = None
    for pair in pairs:
        res_a = pair[0]
        offset, _ = _msm_norm_terms(pair, dt)

        def loss_fn(jets, res=res_a, off=offset):
            g = _pmsm_integrand(jets, res, d) + off
            n = len(g)
            loss = np.mean(g * g)
            bar_grad = np.zeros_like(jets.grad)
            bar_grad[:, :d] = (2.0 / n) * g[:, None] * 2.0 * res.grad_r
            bar_lap = (2.0 / n) * g * res.r
            return loss, None, bar_grad, bar_lap

        loss, gvec = loss_and_param_grad(field.potential, res_a.points, loss_fn, n_spatial=d)
        total += loss
        grad = gvec if grad is None else grad + gvec
    return total, grad


def _face_normals(d: int, faces: np.ndarray) -> np.ndarray:
    normals = np.zeros((len(faces), d))
    axis = faces // 2
    sign = np.where(faces % 2 == 1, 1.0, -1.0)
    normals[np.arange(len(faces)), axis] = sign
    return normals


def neumann_penalty(field: VelocityField, boundary: PointSet) -> float:
    """Mean squared outward-normal velocity over a tagged boundary batch."""
    if boundary.faces is None:
        raise ValueError("boundary PointSet must carry face tags")
    v, _ = velocity_at(field, boundary.points)
    n = _face_normals(field.d, boundary.faces)
    vn = np.einsum("bi,bi->b", v, n)
    return float(np.mean(vn * vn))


def neumann_penalty_grad(field: VelocityField, boundary: PointSet):
    """(penalty, parameter gradient) of :func:`neumann_penalty`."""
    if boundary.faces is None:
        raise ValueError("boundary PointSet must carry face tags")
    d = field.d
    normals = _face_normals(d, boundary.faces)

    def loss_fn(jets):
        vn = np.einsum("bi,bi->b", jets.grad[:, :d], normals)
        n = len(vn)
        loss = np.mean(vn * vn)
        bar_grad = np.zeros_like(jets.grad)
        bar_grad[:, :d] = (2.0 / n) * vn[:, None] * normals
        return loss, None, bar_grad, None

    return loss_and_param_grad(field.potential, boundary.points, loss_fn, n_spatial=d)


def evolve_points(
    field: VelocityField, x: np.ndarray, t_from: float, dt: float, problem: PdeProblem
) -> np.ndarray:
    """One explicit Euler step x + dt V(x, t_from), clamped to the closed box."""
    x = np.atleast_2d(x)
    pts = np.concatenate([x, np.full((len(x), 1), float(t_from))], axis=1)
    v, _ = velocity_at(field, pts)
    if not np.isfinite(v).all():
        bad = int(np.flatnonzero(~np.isfinite(v).all(axis=1))[0])
        raise NumericError("non-finite velocity during evolution", point_index=bad)
    return np.clip(x + dt * v, problem.lo, problem.hi)


def evolve_slice(
    traj: Trajectory, field: VelocityField, from_slice: int, dt: float, problem: PdeProblem
) -> np.ndarray:
    """New slice points evolved from an existing trajectory slice."""
    if not -len(traj) <= from_slice < len(traj):
        raise IndexError(f"slice {from_slice} does not exist")
    return evolve_points(field, traj.slices[from_slice], traj.times[from_slice], dt, problem)


def density_pushforward_check(
    field: VelocityField,
    problem: PdeProblem,
    density_fn,
    n: int,
    steps: int,
    dt: float,
    seed: int = 0,
    bins: int = 10,
    clamp: bool = True,
    wrap: bool = False,
):
    """Continuity-equation diagnostic for planted velocity fields.

    Transports n uniform samples for the given number of Euler steps and
    compares the per-axis histogram against the analytically pushed-forward
    density ``density_fn(x) -> per-point density`` evaluated on the final
    box. Returns (max abs bin discrepancy in counts, max allowed 3-sigma
    multinomial discrepancy).
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(problem.lo, problem.hi, size=(n, problem.d))
    t = problem.t0
    for _ in range(steps):
        pts = np.concatenate([x, np.full((n, 1), t)], axis=1)
        v, _ = velocity_at(field, pts)
        x = x + dt * v
        if wrap:
            x = problem.lo + np.mod(x - problem.lo, problem.hi - problem.lo)
        elif clamp:
            x = np.clip(x, problem.lo, problem.hi)
        t += dt
    max_disc = 0.0
    max_allowed = 0.0
    for axis in range(problem.d):
        lo = x[:, axis].min()
        hi = x[:, axis].max() + 1e-12
        edges = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(x[:, axis], bins=edges)
        centers = 0.5 * (edges[:-1] + edges[1:])
        probe = np.tile((problem.lo + problem.hi) / 2.0, (bins, 1))
        probe[:, axis] = centers
        dens = density_fn(probe)
        probs = dens / dens.sum()
        expected = n * probs
        sigma = np.sqrt(n * probs * (1.0 - probs))
        max_disc = max(max_disc, float(np.max(np.abs(counts - expected))))
        max_allowed = max(max_allowed, float(np.max(3.0 * sigma)))
    return max_disc, max_allowed
