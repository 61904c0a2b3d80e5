"""Homogenized problems on the box with the effective Robin layer on Gamma0.

State::

    -Laplace u0 = f,  d_nu u0 + sigma u0 = v on Gamma0,  u0 = 0 on Gamma1,
    sigma = A1 a / (a + Cn)

Adjoint (weak form, test functions vanishing on Gamma1)::

    int grad P . grad phi + int_G0 sigma P phi
        = int B grad(u0 - uT) . grad phi + int_G0 tau u0 phi,
    tau = A2 trB a^2 / (a + Cn)^2

Cost::

    J0(v) = eta/2 int B grad(u0-uT).grad(u0-uT) + N/2 int_G0 v^2 + eta/2 int_G0 tau u0^2

The discrete adjoint is the transpose of the discrete state map, so the
discrete gradient of J0 is exactly ``h^2 (N v + eta P|Gamma0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core_model import ProblemConfig, constants, effective_robin, strange_term_coeff
from .grid_fd import BForm, Grid, PoissonOperator, SpectralSolver, pcg, seq_dot
from .optim import minimize_quadratic


@dataclass
class LimitSolution:
    u0: np.ndarray
    P0: np.ndarray
    v0: np.ndarray
    J0_value: float
    iterations: int
    residuals: list = field(default_factory=list)

    @property
    def opt_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def _b_matrix(grid, B):
    """Constant B as a 3x3 array (fast path), otherwise a callable of points."""
    if B.is_constant:
        return B.value
    return B


class LimitSolver:
    """Discrete homogenized solver bound to one configuration."""

    def __init__(self, cfg: ProblemConfig):
        self.cfg = cfg
        self.grid = grid = Grid(cfg.grid_nodes, cfg.n)
        self.consts = c = constants(cfg.n, cfg.C0)
        pts = grid.gamma0_points()
        a0 = cfg.a(pts)
        self.sigma = np.asarray(effective_robin(a0, c))
        self.tau = np.asarray(strange_term_coeff(a0, cfg.B.trace(pts), c))
        self.ratio_sq = (a0 / (a0 + c.Cn)) ** 2
        self.load = grid.volume_weights() * grid.sample(cfg.f)
        self.uT = grid.sample(cfg.uT)
        self.bform = BForm(grid, _b_matrix(grid, cfg.B))
        self.op = PoissonOperator(grid, self.sigma)
        self.uniform_sigma = bool(np.ptp(self.sigma) <= 1e-14 * max(np.max(self.sigma), 1.0))
        self.fast = SpectralSolver(grid, float(np.mean(self.sigma)))
        self.linear_iterations = 0

    # -- linear algebra -----------------------------------------------------

    def solve_operator(self, rhs):
        """Solve ``S x = rhs`` on the free nodes (S = stiffness + Robin)."""
        if self.uniform_sigma:
            return self.fast.solve(rhs)
        mask = self.grid.free_mask()
        b = np.where(mask, rhs, 0.0)
        x0 = self.fast.solve(b)
        x, it, _ = pcg(self.op.apply, b, self.fast.solve, self.cfg.tol_linear, 20000, x0)
        self.linear_iterations += it
        return x

    def _face(self, w):
        return np.array(w[self.grid.gamma0])

    # -- state, adjoint, cost -----------------------------------------------

    def state(self, v, homogeneous=False):
        rhs = self.grid.lift_boundary(v)
        if not homogeneous:
            rhs += self.load
        return self.solve_operator(rhs)

    def adjoint(self, u, homogeneous=False):
        diff = u if homogeneous else u - self.uT
        rhs = self.bform.apply(diff)
        rhs[self.grid.gamma0] += self.grid.h**2 * self.tau * self._face(u)
        return self.solve_operator(rhs)

    def cost(self, v, u) -> float:
        h2 = self.grid.h**2
        diff = u - self.uT
        track = self.bform.value(diff) + h2 * seq_dot(self.tau, self._face(u) ** 2)
        return 0.5 * self.cfg.eta * track + 0.5 * self.cfg.bigN * h2 * seq_dot(v, v)

    def gradient(self, v, homogeneous=False):
        """``N v + eta P(v)`` on Gamma0 (the L2 gradient of J0)."""
        u = self.state(v, homogeneous)
        P = self.adjoint(u, homogeneous)
        return self.cfg.bigN * v + self.cfg.eta * self._face(P)

    # -- quadratic-form pieces for dense probing ----------------------------
    # The tracking part of J0 is (z - zT) . W (z - zT) with z = (u, u|Gamma0).

    def features(self, u):
        return np.concatenate([u.ravel(), self._face(u).ravel()])

    def weighted_features(self, u, homogeneous=True):
        diff = u if homogeneous else u - self.uT
        h2 = self.grid.h**2
        return np.concatenate([self.bform.apply(diff).ravel(), (h2 * self.tau * self._face(u)).ravel()])

    # -- drivers --------------------------------------------------------------

    def optimize(self, v_init=None) -> LimitSolution:
        cfg = self.cfg
        v0 = np.zeros(self.grid.face_shape) if v_init is None else np.asarray(v_init, dtype=float)
        res = minimize_quadratic(
            self.gradient,
            lambda d: self.gradient(d, homogeneous=True),
            cfg.bigN,
            v0,
            cfg.tol_opt,
            cfg.max_iter,
        )
        u = self.state(res.v)
        P = self.adjoint(u)
        return LimitSolution(u, P, res.v, self.cost(res.v, u), res.iterations, res.history)

    def uncontrolled(self):
        """Uncontrolled problem with ``B = I``, ``uT = 0``; returns ``(u0, P0aux, energy)``."""
        grid = self.grid
        u = self.state(np.zeros(grid.face_shape))
        unit = BForm(grid, np.eye(3))
        weight = self.consts.A1 * self.ratio_sq
        rhs = unit.apply(u)
        rhs[grid.gamma0] += grid.h**2 * weight * self._face(u)
        P = self.solve_operator(rhs)
        energy = unit.value(u) + grid.h**2 * seq_dot(weight, self._face(u) ** 2)
        return u, P, energy


@lru_cache(maxsize=4)
def limit_solver(cfg: ProblemConfig) -> LimitSolver:
    return LimitSolver(cfg)


def solve_state_limit(cfg: ProblemConfig, v):
    return limit_solver(cfg).state(np.asarray(v, dtype=float))


def solve_adjoint_limit(cfg: ProblemConfig, u0):
    return limit_solver(cfg).adjoint(np.asarray(u0, dtype=float))


def eval_J0(cfg: ProblemConfig, v, u0) -> float:
    s = limit_solver(cfg)
    u0 = s.grid.check_field(u0, "u0")
    return s.cost(np.asarray(v, dtype=float), u0)


def solve_coupled_limit(cfg: ProblemConfig, v_init=None) -> LimitSolution:
    return limit_solver(cfg).optimize(v_init)


def solve_uncontrolled_limit(cfg: ProblemConfig):
    return limit_solver(cfg).uncontrolled()
