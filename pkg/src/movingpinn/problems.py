"""The four benchmark PDEs behind one problem interface.

Each problem supplies its residual operator (as a function of network jets),
closed-form exact solution, initial/boundary data, the log-density used to
seed adaptive samples at t=0, and a signed front functional measuring the
distance to the moving singular set.

Benchmarks:
  burgers2d       2D viscous Burgers with a thin traveling front x+y=t.
  parabolic2d     heat equation with a forced moving, growing Gaussian peak.
  fokker_planck3d density transport concentrated on a moving spherical shell.
  burgers6d       6D Burgers with a rational deceleration law g(t)=t/(1+t).

Points are arrays of shape (B, d+1) with columns (x_1..x_d, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import qmc

from .nets import DenseNet, JetBatch, forward_jets

__all__ = [
    "DomainError",
    "ResidualData",
    "ResidualBatch",
    "PdeProblem",
    "Burgers2d",
    "Parabolic2d",
    "FokkerPlanck3d",
    "Burgers6d",
    "PROBLEM_IDS",
    "make_problem",
    "residual",
    "residual_batch",
    "residual_data",
    "residual_data_batch",
]


class DomainError(ValueError):
    """Point outside the closed space-time box of the problem."""


@dataclass
class ResidualData:
    """Residual and its space/time derivatives at one point on a frozen net."""

    r: float
    grad_r: np.ndarray
    dr_dt: float
    one_sided: bool = False


@dataclass
class ResidualBatch:
    """Batched :class:`ResidualData`: frozen coefficients for velocity losses."""

    points: np.ndarray
    r: np.ndarray
    grad_r: np.ndarray
    dr_dt: np.ndarray
    one_sided: np.ndarray


def _log_2cosh(y):
    # log(2 cosh y), overflow-safe
    ay = np.abs(y)
    return ay + np.log1p(np.exp(-2.0 * ay))


class PdeProblem:
    """Base benchmark descriptor; subclasses fill in the analytic pieces."""

    id: str
    d: int
    T: float
    t0: float = 0.0
    needs_velocity_neumann: bool = False
    seed_density: str = "abs_u0"  # or "grad_energy_u0"

    def __init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    # -- geometry ---------------------------------------------------------

    def in_space(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def in_domain(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = self.in_space(pts[:, : self.d])
        t = pts[:, self.d]
        # grid times are built as t0 + k*dt and accumulate roundoff, so the
        # final slice can overshoot T by a few ulp; tolerate that here
        tol = 1e-9 * max(1.0, abs(self.T))
        return ok & (t >= self.t0 - tol) & (t <= self.T + tol)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    # -- analytic pieces supplied by subclasses ---------------------------

    def exact(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        pts = np.concatenate([x, np.full((len(x), 1), self.t0)], axis=1)
        return self.exact(pts)

    def boundary(self, pts: np.ndarray) -> np.ndarray:
        return self.exact(pts)

    def residual_from_jets(self, jets: JetBatch, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual_jet_partials(self, jets: JetBatch, pts: np.ndarray):
        """(d r/d value, d r/d grad, d r/d lap) at each point."""
        raise NotImplementedError

    def log_density_ic(self, x: np.ndarray, eps: float):
        """Unnormalized seed log-density at t=t0 and its spatial gradient.

        Points outside the closed box get -inf (gradient zero there).
        """
        x = np.atleast_2d(x)
        logp, grad = self._log_density_ic_inside(x, eps)
        outside = ~self.in_space(x)
        logp = np.where(outside, -np.inf, logp)
        grad = np.where(outside[:, None], 0.0, grad)
        return logp, grad

    def _log_density_ic_inside(self, x, eps):
        raise NotImplementedError

    def front_functional(self, x: np.ndarray, t: float) -> np.ndarray:
        """Signed distance-like functional vanishing on the singular set."""
        raise NotImplementedError


class _SigmoidFront(PdeProblem):
    """Shared machinery for the two Burgers-type traveling-front problems."""

    alpha: float
    seed_density = "grad_energy_u0"
    needs_velocity_neumann = True

    def _front_shift(self, t):
        """The exact solution is expit(-(sum(x) - shift(t)) / (2 alpha))."""
        raise NotImplementedError

    def exact(self, pts):
        pts = np.atleast_2d(pts)
        s = (pts[:, : self.d].sum(axis=1) - self._front_shift(pts[:, self.d])) / (2.0 * self.alpha)
        return expit(-s)

    def _log_density_ic_inside(self, x, eps):
        # G = ||grad u0||^2 = d * (u0 (1-u0))^2 / (4 alpha^2)
        a = self.alpha
        s = (x.sum(axis=1) - self._front_shift(np.full(len(x), self.t0))) / (2.0 * a)
        u0 = expit(-s)
        # log(u0(1-u0)) = -2 log(2 cosh(s/2))
        log_g = np.log(self.d / (4.0 * a * a)) - 4.0 * _log_2cosh(s / 2.0)
        g = np.exp(log_g)
        logp = np.logaddexp(log_g, np.log(eps))
        coeff = -(1.0 - 2.0 * u0) * g / (a * (g + eps))
        grad = np.repeat(coeff[:, None], self.d, axis=1)
        return logp, grad

    def front_functional(self, x, t):
        x = np.atleast_2d(x)
        return x.sum(axis=1) - self._front_shift(np.full(len(x), float(t)))


class Burgers2d(_SigmoidFront):
    """u_t = alpha (u_xx + u_yy) - u (u_x + u_y); front on x + y = t."""

    id = "burgers2d"
    d = 2
    lo = (-1.0, -1.0)
    hi = (1.0, 1.0)
    T = 1.05

    def __init__(self, alpha: float = 0.001):
        self.alpha = float(alpha)
        super().__init__()

    def _front_shift(self, t):
        return t

    def residual_from_jets(self, jets, pts):
        u, g, lap = jets.value, jets.grad, jets.lap_x
        return g[:, 2] - self.alpha * lap + u * (g[:, 0] + g[:, 1])

    def residual_jet_partials(self, jets, pts):
        u, g = jets.value, jets.grad
        dv = g[:, 0] + g[:, 1]
        dgrad = np.empty_like(g)
        dgrad[:, 0] = u
        dgrad[:, 1] = u
        dgrad[:, 2] = 1.0
        dlap = np.full(len(u), -self.alpha)
        return dv, dgrad, dlap


class Parabolic2d(PdeProblem):
    """u_t - u_xx - u_yy = f with a moving Gaussian peak at (t, t^2).

    The forcing f is defined by the exact solution
    u = A(t) exp(-((x-t)^2 + (y-t^2)^2)/alpha), A(t) = Cinf - (Cinf-C0) e^{-beta t},
    implemented from hand-derived closed-form derivatives.
    """

    id = "parabolic2d"
    d = 2
    lo = (-0.2, -0.2)
    hi = (2.5, 2.5)
    T = 1.55
    seed_density = "abs_u0"

    def __init__(self, alpha=0.01, c0=1.0, cinf=4.0, beta=2.0):
        self.alpha = float(alpha)
        self.c0 = float(c0)
        self.cinf = float(cinf)
        self.beta = float(beta)
        super().__init__()

    def _amplitude(self, t):
        return self.cinf - (self.cinf - self.c0) * np.exp(-self.beta * t)

    def exact(self, pts):
        pts = np.atleast_2d(pts)
        x, y, t = pts[:, 0], pts[:, 1], pts[:, 2]
        p = (x - t) ** 2 + (y - t * t) ** 2
        return self._amplitude(t) * np.exp(-p / self.alpha)

    def forcing(self, pts):
        """f = u*_t - u*_xx - u*_yy for the exact solution u*."""
        pts = np.atleast_2d(pts)
        x, y, t = pts[:, 0], pts[:, 1], pts[:, 2]
        a = self.alpha
        amp = self._amplitude(t)
        damp = self.beta * (self.cinf - self.c0) * np.exp(-self.beta * t)
        px, py = x - t, y - t * t
        p = px * px + py * py
        e = np.exp(-p / a)
        p_t = -2.0 * px - 4.0 * t * py
        u_t = damp * e - (amp / a) * e * p_t
        lap = amp * e * (4.0 * p / (a * a) - 4.0 / a)
        return u_t - lap

    def residual_from_jets(self, jets, pts):
        return jets.grad[:, 2] - jets.lap_x - self.forcing(pts)

    def residual_jet_partials(self, jets, pts):
        n = len(jets.value)
        dgrad = np.zeros_like(jets.grad)
        dgrad[:, 2] = 1.0
        return np.zeros(n), dgrad, np.full(n, -1.0)

    def _log_density_ic_inside(self, x, eps):
        a = self.alpha
        q = (x * x).sum(axis=1)
        u0 = self.c0 * np.exp(-q / a)
        logp = np.log(u0 + eps)
        grad = (-2.0 / a) * x * (u0 / (u0 + eps))[:, None]
        return logp, grad

    def front_functional(self, x, t):
        x = np.atleast_2d(x)
        t = float(t)
        return np.sqrt((x[:, 0] - t) ** 2 + (x[:, 1] - t * t) ** 2)


class FokkerPlanck3d(PdeProblem):
    """u_t = -div(f u) + (sigma^2/2) lap u, density on a moving shell.

    Drift f_i = -4 w_i (S - r^2) - e^{-t} with w = x - e^{-t} (1,1,1) and
    S = |w|^2; its divergence is analytic: div f = -12 (S - r^2) - 8 S.
    The initial-condition normalizer K is computed once by scrambled-Sobol
    quasi-Monte Carlo over the box and cached.
    """

    id = "fokker_planck3d"
    d = 3
    lo = (0.0, 0.0, 0.0)
    hi = (2.1, 2.1, 2.1)
    T = 1.15
    seed_density = "abs_u0"

    def __init__(self, sigma=0.1, r=1.0, qmc_log2_points=20):
        self.sigma = float(sigma)
        self.r = float(r)
        self._c = 2.0 / self.sigma**2
        self._qmc_log2_points = int(qmc_log2_points)
        self._k = None
        super().__init__()

    @property
    def normalizer(self) -> float:
        if self._k is None:
            sampler = qmc.Sobol(d=3, scramble=True, seed=20240817)
            u = sampler.random_base2(m=self._qmc_log2_points)
            x = self.lo + u * (self.hi - self.lo)
            s = ((x - 1.0) ** 2).sum(axis=1)
            vals = np.exp(-self._c * (s - self.r**2) ** 2)
            self._k = float(vals.mean() * self.volume())
        return self._k

    def _shell(self, x, t):
        w = x - np.exp(-t)[:, None]
        s = (w * w).sum(axis=1)
        return w, s

    def exact(self, pts):
        pts = np.atleast_2d(pts)
        _, s = self._shell(pts[:, :3], pts[:, 3])
        return np.exp(-self._c * (s - self.r**2) ** 2) / self.normalizer

    def drift(self, pts):
        """Drift vector and its analytic divergence at each point."""
        pts = np.atleast_2d(pts)
        w, s = self._shell(pts[:, :3], pts[:, 3])
        e = np.exp(-pts[:, 3])
        f = -4.0 * w * (s - self.r**2)[:, None] - e[:, None]
        div = -12.0 * (s - self.r**2) - 8.0 * s
        return f, div

    def residual_from_jets(self, jets, pts):
        f, div = self.drift(pts)
        adv = (f * jets.grad[:, :3]).sum(axis=1)
        return jets.grad[:, 3] + jets.value * div + adv - 0.5 * self.sigma**2 * jets.lap_x

    def residual_jet_partials(self, jets, pts):
        f, div = self.drift(pts)
        dgrad = np.empty_like(jets.grad)
        dgrad[:, :3] = f
        dgrad[:, 3] = 1.0
        return div, dgrad, np.full(len(jets.value), -0.5 * self.sigma**2)

    def _log_density_ic_inside(self, x, eps):
        s = ((x - 1.0) ** 2).sum(axis=1)
        u0 = np.exp(-self._c * (s - self.r**2) ** 2) / self.normalizer
        logp = np.log(u0 + eps)
        dphi = 4.0 * self._c * (s - self.r**2)[:, None] * (x - 1.0)
        grad = -dphi * (u0 / (u0 + eps))[:, None]
        return logp, grad

    def front_functional(self, x, t):
        x = np.atleast_2d(x)
        c = np.exp(-float(t))
        return np.sqrt(((x - c) ** 2).sum(axis=1)) - self.r


class Burgers6d(_SigmoidFront):
    """6D Burgers with deceleration g(t)=t/(1+t); front on sum(x) = 3 g(t)."""

    id = "burgers6d"
    d = 6
    lo = (-3.0,) * 6
    hi = (3.0,) * 6
    T = 1.05

    def __init__(self, alpha: float = 0.01):
        self.alpha = float(alpha)
        super().__init__()

    @staticmethod
    def g(t):
        return t / (1.0 + t)

    @staticmethod
    def g_prime(t):
        return 1.0 / (1.0 + t) ** 2

    def _front_shift(self, t):
        return (self.d / 2.0) * self.g(t)

    def residual_from_jets(self, jets, pts):
        pts = np.atleast_2d(pts)
        gp = self.g_prime(pts[:, self.d])
        u, g, lap = jets.value, jets.grad, jets.lap_x
        sgrad = g[:, : self.d].sum(axis=1)
        return g[:, self.d] - gp * (self.alpha * lap - u * sgrad)

    def residual_jet_partials(self, jets, pts):
        pts = np.atleast_2d(pts)
        gp = self.g_prime(pts[:, self.d])
        u, g = jets.value, jets.grad
        dv = gp * g[:, : self.d].sum(axis=1)
        dgrad = np.empty_like(g)
        dgrad[:, : self.d] = (gp * u)[:, None]
        dgrad[:, self.d] = 1.0
        dlap = -gp * self.alpha
        return dv, dgrad, dlap


PROBLEM_IDS = ("burgers2d", "parabolic2d", "fokker_planck3d", "burgers6d")

_REGISTRY = {
    "burgers2d": Burgers2d,
    "parabolic2d": Parabolic2d,
    "fokker_planck3d": FokkerPlanck3d,
    "burgers6d": Burgers6d,
}


def make_problem(problem_id: str, **overrides) -> PdeProblem:
    """Instantiate a benchmark by id, with optional parameter overrides."""
    try:
        cls = _REGISTRY[problem_id]
    except KeyError:
        raise DomainError(f"unknown problem id {problem_id!r}") from None
    return cls(**overrides)


def residual_batch(problem: PdeProblem, jets: JetBatch, pts: np.ndarray) -> np.ndarray:
    """PDE residual r = L u - f from jets at a batch of in-domain points."""
    pts = np.atleast_2d(pts)
    if not problem.in_domain(pts).all():
        bad = int(np.flatnonzero(~problem.in_domain(pts))[0])
        raise DomainError(f"point {bad} outside {problem.id} domain")
    return problem.residual_from_jets(jets, pts)


def residual(problem: PdeProblem, jet, point) -> float:
    """Single-point residual from a :class:`movingpinn.nets.Jet`."""
    point = np.asarray(point, dtype=np.float64)[None, :]
    jets = JetBatch(
        value=np.array([jet.value]),
        grad=np.asarray(jet.grad, dtype=np.float64)[None, :],
        lap_x=np.array([jet.lap_x]),
    )
    return float(residual_batch(problem, jets, point)[0])


def _net_residual(problem: PdeProblem, net: DenseNet, pts: np.ndarray) -> np.ndarray:
    jets = forward_jets(net, pts, n_spatial=problem.d)
    return problem.residual_from_jets(jets, pts)


def residual_data_batch(
    problem: PdeProblem, net: DenseNet, pts: np.ndarray, h_fd: float = 1e-4
) -> ResidualBatch:
    """Residual plus central-FD space/time derivatives on a frozen net.

    Stencils that would leave the closed space-time box fall back to a
    one-sided difference; such points are flagged.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if not problem.in_domain(pts).all():
        raise DomainError("residual_data points must lie in the space-time box")
    n, dim = pts.shape
    lo = np.concatenate([problem.lo, [problem.t0]])
    hi = np.concatenate([problem.hi, [problem.T]])

    r0 = _net_residual(problem, net, pts)
    grad = np.empty((n, dim))
    one_sided = np.zeros(n, dtype=bool)
    for j in range(dim):
        up_ok = pts[:, j] + h_fd <= hi[j]
        dn_ok = pts[:, j] - h_fd >= lo[j]
        one_sided |= ~(up_ok & dn_ok)
        pp = pts.copy()
        pp[:, j] = np.where(up_ok, pts[:, j] + h_fd, pts[:, j])
        pm = pts.copy()
        pm[:, j] = np.where(dn_ok, pts[:, j] - h_fd, pts[:, j])
        denom = pp[:, j] - pm[:, j]
        grad[:, j] = (_net_residual(problem, net, pp) - _net_residual(problem, net, pm)) / denom
    return ResidualBatch(
        points=pts, r=r0, grad_r=grad[:, : problem.d], dr_dt=grad[:, problem.d], one_sided=one_sided
    )


def residual_data(problem: PdeProblem, net: DenseNet, point, h_fd: float = 1e-4) -> ResidualData:
    """Single-point :class:`ResidualData` on a frozen solution net."""
    batch = residual_data_batch(problem, net, np.asarray(point)[None, :], h_fd=h_fd)
    return ResidualData(
        r=float(batch.r[0]),
        grad_r=batch.grad_r[0].copy(),
        dr_dt=float(batch.dr_dt[0]),
        one_sided=bool(batch.one_sided[0]),
    )
