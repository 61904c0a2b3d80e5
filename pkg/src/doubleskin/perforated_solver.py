"""Box with a layer of small Robin spheres, modelled as point sinks.

Each sphere j is replaced by a point source of strength ``q_j`` at its
centre.  The isolated-sphere Robin response at the critical scaling fixes
the strength from the local background value ``U_j``::

    q_j = -sigma_j eps^(n-1) U_j,      sigma_j = A1 a_j / (a_j + Cn)

``U_j`` is the average of the grid field over the probe shell
``eps/8 <= r <= eps/4`` minus the analytic self-field of the source.  The
background problem is the Neumann-bottom Poisson problem

    A0 u = W f + h^2 v + D q

with ``D`` depositing each ``q_j`` on the centre node.  Interactions between
particles are carried entirely by ``A0``.

Cost and energy integrate the grid field outside the probe balls and add
the closed-form shell integrals of the point-source field (its gradient is
unresolvable on the grid but carries an O(1) share of the energy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core_model import ParticleLayer, ProblemConfig, build_particle_layer, constants, effective_robin
from .errors import ConfigError, ConvergenceError, GridTooCoarseError
from .grid_fd import BForm, Grid, SpectralSolver, seq_dot
from .optim import minimize_quadratic

DAMPING = 0.5
CLOSURE_TOL = 1e-10
CLOSURE_MAXITER = 200
# Closure tolerance used inside the optimizer, where the forward and adjoint
# maps must agree to well below the optimality tolerance.
OPT_CLOSURE_TOL = 1e-14


@dataclass
class MonopoleState:
    q: np.ndarray
    U: np.ndarray
    iterations: int
    residual: float


@dataclass
class EpsState:
    u: np.ndarray
    monopoles: MonopoleState

    @property
    def q(self):
        return self.monopoles.q


@dataclass
class EpsSolution:
    u_eps: np.ndarray
    monopoles: MonopoleState
    P_eps: np.ndarray
    v_eps: np.ndarray
    J_eps: float
    energy_eps: float
    iterations: int
    residuals: list = field(default_factory=list)

    @property
    def opt_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def _ball_offsets(radius_cells, lo, hi, shift=0.0):
    """Integer offsets whose (shifted) length in cell units lies in ``[lo, hi]``."""
    R = int(np.ceil(hi + 1))
    r = np.arange(-R, R + 1)
    off = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = np.linalg.norm(off + shift, axis=1)
    keep = (dist >= lo * (1 - 1e-12)) & (dist <= hi * (1 + 1e-12))
    return off[keep], dist[keep]


class EpsProblem:
    """Discrete point-particle problem for one configuration and particle layer."""

    def __init__(self, cfg: ProblemConfig, layer: ParticleLayer | None = None, closure_tol: float = CLOSURE_TOL):
        self.cfg = cfg
        self.layer = layer = build_particle_layer(cfg) if layer is None else layer
        self.grid = grid = Grid(cfg.grid_nodes, cfg.n)
        self.closure_tol = closure_tol
        n, h, M = cfg.n, grid.h, grid.cells
        if layer.count and layer.n != n:
            raise ConfigError("particle centres have the wrong dimension")
        R = layer.probe_radius
        if h > R * (1 + 1e-12):
            raise GridTooCoarseError(f"grid spacing h = {h:.6g} exceeds eps/4 = {R:.6g}; refine grid_nodes")
        self.consts = c = constants(n, cfg.C0)
        centers = layer.centers
        idx = np.rint(centers / h).astype(int) if layer.count else np.zeros((0, 3), dtype=int)
        if layer.count and np.max(np.abs(centers / h - idx)) > 1e-9:
            raise ConfigError("particle centres must coincide with grid nodes (need 1/eps to divide grid_nodes/2)")
        if layer.count and np.ptp(idx[:, 2]) != 0:
            raise ConfigError("all particle centres must lie on one grid plane")
        self.idx = idx
        self.kc = int(idx[0, 2]) if layer.count else 1
        self.fast = SpectralSolver(grid, 0.0)

        # probe shell used to read the background value
        off, dist = _ball_offsets(R / h, 0.5 * R / h, R / h)
        self.shell = off
        self.self_coeff = float(np.mean((dist * h) ** (2 - n))) / ((n - 2) * c.omega_n)
        self.levels = np.unique(off[:, 2])
        G = self.fast.level_response(self.kc)
        self.green = np.ascontiguousarray(G[:, self.kc + self.levels])
        self._shell_level = np.searchsorted(self.levels, off[:, 2])

        a_j = cfg.a(centers) if layer.count else np.zeros(0)
        trB_j = cfg.B.trace(centers) if layer.count else np.zeros(0)
        sigma_j = np.asarray(effective_robin(a_j, c)) if layer.count else np.zeros(0)
        self.kappa = sigma_j * layer.eps ** (n - 1)
        rad = layer.radius
        shell_int = (rad ** (2 - n) - R ** (2 - n)) / (n - 2)
        self.shell_int = shell_int
        self.c_track = trB_j * shell_int / (n * c.omega_n)
        lap_uT = cfg.uT.laplacian(centers) if layer.count else np.zeros(0)
        f_j = cfg.f(centers) if layer.count else np.zeros(0)
        self.ell_track = trB_j / n**2 * (f_j + lap_uT) * (R**2 - rad**2) / 2
        self.c_energy = np.full(layer.count, shell_int / c.omega_n)
        self.ell_energy = f_j / n * (R**2 - rad**2) / 2

        self.cell_mask = self._probe_cell_mask()
        B = cfg.B.value if cfg.B.is_constant else cfg.B
        self.bform = BForm(grid, B, self.cell_mask)
        self.unit_bform = BForm(grid, np.eye(3), self.cell_mask)
        self.load = grid.volume_weights() * grid.sample(cfg.f)
        self.uT = grid.sample(cfg.uT)

    # -- geometry helpers ------------------------------------------------------

    def _probe_cell_mask(self):
        M, h = self.grid.cells, self.grid.h
        mask = np.ones((M, M, M))
        if not self.layer.count:
            return mask
        off, _ = _ball_offsets(0, 0.0, self.layer.probe_radius / h, shift=0.5)
        cells = self.idx[:, None, :] + off[None, :, :]
        mask[cells[..., 0].ravel(), cells[..., 1].ravel(), cells[..., 2].ravel()] = 0.0
        return mask

    def _shell_index(self):
        nodes = self.idx[:, None, :] + self.shell[None, :, :]
        return nodes[..., 0], nodes[..., 1], nodes[..., 2]

    def shell_average(self, w):
        i, j, k = self._shell_index()
        return w[i, j, k].mean(axis=1)

    def deposit(self, q):
        out = self.grid.zeros()
        if self.layer.count:
            out[self.idx[:, 0], self.idx[:, 1], self.idx[:, 2]] = q
        return out

    # -- particle coupling via per-mode Green's responses --------------------

    def _plane(self, values, ii, jj):
        M = self.grid.cells
        plane = np.zeros((M - 1, M - 1))
        np.add.at(plane, (ii - 1, jj - 1), values)
        return self.fast.transform(plane).ravel()

    def coupling(self, q):
        """``T q``: shell averages of ``A0^{-1} D q``."""
        M = self.grid.cells
        qh = self._plane(q, self.idx[:, 0], self.idx[:, 1])
        i, j, _ = self._shell_index()
        acc = np.zeros(i.shape)
        for li in range(len(self.levels)):
            plane = self.fast.transform((self.green[:, li] * qh).reshape(M - 1, M - 1))
            sel = self._shell_level == li
            acc[:, sel] = plane[i[:, sel] - 1, j[:, sel] - 1]
        return acc.mean(axis=1)

    def coupling_T(self, y):
        """Transpose of :meth:`coupling`."""
        M = self.grid.cells
        i, j, _ = self._shell_index()
        S = self.shell.shape[0]
        total = np.zeros((M - 1) ** 2)
        for li in range(len(self.levels)):
            sel = self._shell_level == li
            w = np.repeat(y[:, None] / S, int(sel.sum()), axis=1)
            total += self.green[:, li] * self._plane(w.ravel(), i[:, sel].ravel(), j[:, sel].ravel())
        plane = self.fast.transform(total.reshape(M - 1, M - 1))
        return plane[self.idx[:, 0] - 1, self.idx[:, 1] - 1]

    def spread_T(self, y):
        """``M^T y``: distribute each value evenly over its probe shell nodes."""
        out = self.grid.zeros()
        i, j, k = self._shell_index()
        np.add.at(out, (i, j, k), np.repeat(y[:, None] / self.shell.shape[0], self.shell.shape[0], axis=1))
        return out

    def _picard(self, step, tol):
        J = self.layer.count
        q = np.zeros(J)
        if J == 0:
            return q, 0, 0.0
        change = np.inf
        for it in range(1, CLOSURE_MAXITER + 1):
            q_new = (1 - DAMPING) * q + DAMPING * step(q)
            top = np.max(np.abs(q_new))
            change = np.max(np.abs(q_new - q)) / top if top > 0 else 0.0
            q = q_new
            if change <= tol:
                return q, it, change
        raise ConvergenceError("particle closure did not converge", change, CLOSURE_MAXITER, q)

    # -- forward / adjoint / cost --------------------------------------------------

    def state(self, v, homogeneous=False, tol=None) -> EpsState:
        tol = self.closure_tol if tol is None else tol
        rhs = self.grid.lift_boundary(v)
        if not homogeneous:
            rhs += self.load
        ub = self.fast.solve(rhs)
        U0 = self.shell_average(ub)
        s = self.self_coeff
        q, it, res = self._picard(lambda q: -self.kappa * (U0 + self.coupling(q) - s * q), tol)
        U = U0 + self.coupling(q) - s * q if self.layer.count else U0
        u = ub + self.fast.solve(self.deposit(q)) if self.layer.count else ub
        return EpsState(u, MonopoleState(q, U, it, res))

    def adjoint(self, st: EpsState, homogeneous=False, tol=None):
        """Transpose of the discrete state map applied to the cost sensitivities."""
        tol = self.closure_tol if tol is None else tol
        gu = self.bform.apply(st.u if homogeneous else st.u - self.uT)
        gq = self.c_track * st.q + (0.0 if homogeneous else self.ell_track)
        Pc = self.fast.solve(gu)
        if not self.layer.count:
            return Pc
        hq = Pc[self.idx[:, 0], self.idx[:, 1], self.idx[:, 2]] + gq
        s = self.self_coeff
        y, _, _ = self._picard(lambda y: hq - (self.coupling_T(self.kappa * y) - s * self.kappa * y), tol)
        return Pc - self.fast.solve(self.spread_T(self.kappa * y))

    def cost(self, v, st: EpsState) -> float:
        cfg, h2 = self.cfg, self.grid.h**2
        q = st.q
        track = self.bform.value(st.u - self.uT) + seq_dot(self.c_track * q, q) + 2 * seq_dot(self.ell_track, q)
        return 0.5 * cfg.eta * track + 0.5 * cfg.bigN * h2 * seq_dot(v, v)

    def energy(self) -> float:
        """Uncontrolled energy with ``B = I``, ``uT = 0``, ``v = 0``."""
        st = self.state(np.zeros(self.grid.face_shape))
        q = st.q
        return self.unit_bform.value(st.u) + seq_dot(self.c_energy * q, q) + 2 * seq_dot(self.ell_energy, q)

    def gradient(self, v, homogeneous=False, tol=OPT_CLOSURE_TOL):
        st = self.state(v, homogeneous, tol)
        P = self.adjoint(st, homogeneous, tol)
        return self.cfg.bigN * v + self.cfg.eta * P[self.grid.gamma0]

    # The tracking part of J_eps is (z - zT) . W (z - zT) + 2 ell . q with z = (u, q).

    def features(self, st: EpsState):
        return np.concatenate([st.u.ravel(), st.q])

    def weighted_features(self, st: EpsState, homogeneous=True):
        diff = st.u if homogeneous else st.u - self.uT
        lin = 0.0 if homogeneous else self.ell_track
        return np.concatenate([self.bform.apply(diff).ravel(), self.c_track * st.q + lin])

    def optimize(self, v_init=None, with_energy=True) -> EpsSolution:
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
        st = self.state(res.v, tol=OPT_CLOSURE_TOL)
        P = self.adjoint(st, tol=OPT_CLOSURE_TOL)
        energy = self.energy() if with_energy else float("nan")
        return EpsSolution(st.u, st.monopoles, P, res.v, self.cost(res.v, st), energy, res.iterations, res.history)


@lru_cache(maxsize=4)
def eps_problem(cfg: ProblemConfig, layer: ParticleLayer | None = None) -> EpsProblem:
    return EpsProblem(cfg, layer)


def solve_state_eps(cfg: ProblemConfig, layer: ParticleLayer | None, v):
    st = eps_problem(cfg, layer).state(np.asarray(v, dtype=float))
    return st.u, st.monopoles


def eval_J_eps(cfg: ProblemConfig, layer: ParticleLayer | None, v) -> float:
    p = eps_problem(cfg, layer)
    v = np.asarray(v, dtype=float)
    return p.cost(v, p.state(v))


def optimize_eps(cfg: ProblemConfig, layer: ParticleLayer | None = None, v_init=None) -> EpsSolution:
    return eps_problem(cfg, layer).optimize(v_init)


def energy_eps(cfg: ProblemConfig, layer: ParticleLayer | None = None) -> float:
    return eps_problem(cfg, layer).energy()
