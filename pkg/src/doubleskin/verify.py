"""Independent oracles and convergence studies.

The oracles here do not share code paths with the solvers they check:

* :func:`radial_robin_oracle` discretises the single-sphere radial problem
  on its own 1-D grid;
* :func:`lemma21_check` uses closed-form shell integrals and Gauss-Legendre
  quadrature only;
* :func:`probe_optimum` rebuilds the reduced quadratic from forward solves
  alone (no adjoint) and minimises it densely.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_banded

from .core_model import ProblemConfig, lattice_size, sphere_area
from .errors import ConfigError, ConvergenceError, DomainError
from .fields import MatrixField
from .grid_fd import integrate_volume
from .limit_solver import LimitSolver
from .perforated_solver import OPT_CLOSURE_TOL, EpsProblem

# ----------------------------------------------------------------------------
# Single-sphere radial oracle


def radial_robin_profile(n, C0, eps, a_val, radial_nodes=10_000):
    """Radial Robin problem on the shell ``a_eps <= r <= eps/4``.

    Solves ``(r^(n-1) u')' = 0`` with ``u'(a) = eps^-gamma a_val u(a)`` and
    ``u(eps/4) = 1`` on a geometric grid.  The cell conductances are the exact
    integrals ``omega_n / int r^(1-n) dr``, so nodal values coincide with the
    two-parameter family ``c1 + c2 r^(2-n)``.

    Returns
    -------
    r, u : ndarray
        Nodes and nodal values.
    flux : float
        ``omega_n a^(n-1) u'(a)``, the total flux into the sphere.
    """
    if radial_nodes < 1000:
        raise ConfigError("radial_nodes must be at least 1000")
    if n < 3:
        raise DomainError("radial oracle needs n >= 3")
    gamma = (n - 1) / (n - 2)
    a = C0 * eps**gamma
    R = eps / 4
    if not (0 < a < R):
        raise DomainError(f"shell is degenerate: a_eps = {a:.6g}, eps/4 = {R:.6g}")
    if not a_val > 0:
        raise DomainError("a must be positive")
    omega = sphere_area(n)
    r = a * (R / a) ** np.linspace(0.0, 1.0, radial_nodes)
    r[-1] = R
    # omega (n-2) / (r_i^(2-n) - r_{i+1}^(2-n)), written to avoid cancellation
    inv = r[:-1] ** (2 - n) * -np.expm1((2 - n) * np.log(r[1:] / r[:-1]))
    G = omega * (n - 2) / inv
    robin = omega * a ** (n - 1) * eps**-gamma * a_val

    K = radial_nodes - 1  # unknowns u_0 .. u_{K-1}; u_K = 1
    diag = np.zeros(K)
    diag[0] = G[0] + robin
    diag[1:] = G[:-1][: K - 1] + G[1:K]
    ab = np.zeros((3, K))
    ab[1] = diag
    ab[0, 1:] = -G[: K - 1]
    ab[2, :-1] = -G[: K - 1]
    rhs = np.zeros(K)
    rhs[-1] = G[K - 1]
    u = np.append(solve_banded((1, 1), ab, rhs), 1.0)
    return r, u, float(robin * u[0])


def radial_robin_oracle(n, C0, eps, a_val, radial_nodes=10_000) -> float:
    """Normalised flux ``Phi / (U eps^(n-1))`` of one critical Robin sphere (far value U = 1)."""
    _, _, flux = radial_robin_profile(n, C0, eps, a_val, radial_nodes)
    return flux / eps ** (n - 1)


# ----------------------------------------------------------------------------
# Shell-sum identity for the trace of B


def default_bump(points):
    """``prod_i sin^2(pi x_i) * (1 - x_n)^2`` over the lateral coordinates."""
    pts = np.asarray(points, dtype=float)
    out = (1.0 - pts[..., -1]) ** 2
    for d in range(pts.shape[-1] - 1):
        out = out * np.sin(np.pi * pts[..., d]) ** 2
    return out


@dataclass
class LemmaRow:
    eps: float
    lhs: float
    rhs: float
    gap: float


def lemma21_check(B: MatrixField, phi=None, eps_list=(1 / 8, 1 / 16, 1 / 32, 1 / 64), n=3, C0=0.5,
                  quad_nodes=48):
    """Compare the per-particle shell sum with its Gamma0 limit for each eps.

    LHS: ``sum_j a^(2(n-2)) (n-2)^2 (trB_j / n) omega_n int_a^{eps/4} r^(1-n) dr phi(P_j)``
    with B and phi frozen at the centres.  RHS:
    ``C0^(n-2) (n-2) omega_n / n * int_Gamma0 trB phi``.
    """
    if phi is None:
        phi = default_bump
    if not callable(phi):
        raise ConfigError("phi must be a callable of points")
    omega = sphere_area(n)
    x, w = leggauss(quad_nodes)
    x, w = (x + 1) / 2, w / 2
    grids = list(np.meshgrid(*([x] * (n - 1)), indexing="ij"))
    pts = np.stack(grids + [np.zeros_like(grids[0])], axis=-1)
    weights = np.ones_like(grids[0])
    for g in np.meshgrid(*([w] * (n - 1)), indexing="ij"):
        weights = weights * g
    vals = np.asarray(phi(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError("phi is not finite on Gamma0")
    rhs = C0 ** (n - 2) * (n - 2) * omega / n * float(np.sum(weights * B.trace(pts) * vals))
    rows = []
    for eps in eps_list:
        m = lattice_size(eps)
        j = np.arange(1, m) / m
        lateral = np.stack(np.meshgrid(*([j] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
        centres = np.hstack([lateral, np.full((len(lateral), 1), eps / 2)])
        a = C0 * eps ** ((n - 1) / (n - 2))
        R = eps / 4
        if not a < R:
            raise DomainError("particle radius exceeds the probe radius")
        shell = (a ** (2 - n) - R ** (2 - n)) / (n - 2)
        phic = np.asarray(phi(centres), dtype=float)
        if not np.all(np.isfinite(phic)):
            raise DomainError("phi is not finite at the particle centres")
        lhs = a ** (2 * (n - 2)) * (n - 2) ** 2 * omega * shell * float(np.sum(B.trace(centres) / n * phic))
        gap = abs(lhs - rhs) / abs(rhs) if rhs != 0 else abs(lhs - rhs)
        rows.append(LemmaRow(eps, lhs, rhs, gap))
    return rows


# ----------------------------------------------------------------------------
# Gradients and dense probing


def make_problem(kind, cfg, layer=None):
    if kind == "limit":
        return LimitSolver(cfg)
    if kind == "eps":
        return EpsProblem(cfg, layer)
    raise ConfigError(f"solver kind must be 'limit' or 'eps', got {kind!r}")


def _forward(problem, v, homogeneous=False):
    if isinstance(problem, EpsProblem):
        return problem.state(v, homogeneous, tol=OPT_CLOSURE_TOL)
    return problem.state(v, homogeneous)


def _cost(problem, v):
    return problem.cost(v, _forward(problem, v))


def gradient_check(kind, cfg: ProblemConfig, n_dirs=5, seed=0, layer=None, step=1e-4, v=None) -> float:
    """Worst relative gap between central differences and the adjoint gradient.

    Directions are random unit vectors on Gamma0; the base control is random
    unless ``v`` is given.
    """
    problem = make_problem(kind, cfg, layer)
    rng = np.random.default_rng(seed)
    shape = problem.grid.face_shape
    v = rng.standard_normal(shape) if v is None else np.asarray(v, dtype=float)
    if not step > 1e-12 * max(1.0, float(np.max(np.abs(v)))):
        raise DomainError(f"step {step:g} underflows relative to the control size")
    grad = problem.gradient(v) * problem.grid.h**2
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(shape)
        d /= np.linalg.norm(d)
        fd = (_cost(problem, v + step * d) - _cost(problem, v - step * d)) / (2 * step)
        ad = float(np.sum(grad * d))
        scale = max(abs(fd), abs(ad))
        if scale > 0:
            worst = max(worst, abs(fd - ad) / scale)
    return worst


def probe_optimum(problem):
    """Minimise the reduced cost densely from one forward solve per Gamma0 node.

    The Hessian and linear term are assembled from the state responses to
    every Gamma0 basis vector; the adjoint is never used.
    """
    cfg, grid = problem.cfg, problem.grid
    shape = grid.face_shape
    size = shape[0] * shape[1]
    zero = np.zeros(shape)
    aff = _forward(problem, zero)
    g_aff = problem.weighted_features(aff, homogeneous=False)
    Z = np.empty((size, len(g_aff)))
    WZ = np.empty_like(Z)
    for i in range(size):
        e = np.zeros(size)
        e[i] = 1.0
        st = _forward(problem, e.reshape(shape), homogeneous=True)
        Z[i] = problem.features(st)
        WZ[i] = problem.weighted_features(st)
    H = cfg.eta * (Z @ WZ.T)
    H = 0.5 * (H + H.T) + cfg.bigN * grid.h**2 * np.eye(size)
    g = cfg.eta * (Z @ g_aff)
    return np.linalg.solve(H, -g).reshape(shape)


# ----------------------------------------------------------------------------
# Convergence in eps

COLUMNS = (
    "eps",
    "grid",
    "J_eps",
    "J0",
    "rel_cost_gap",
    "energy_eps",
    "energy_limit",
    "rel_energy_gap",
    "l2_field_gap",
    "opt_residual_eps",
    "opt_residual_limit",
    "seconds",
)

TREND_COLUMNS = ("rel_cost_gap", "rel_energy_gap", "l2_field_gap")


def _rel_gap(value, ref):
    return abs(value - ref) / abs(ref) if ref != 0 else abs(value - ref)


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    failure: str | None = None
    wall_seconds: list = field(default_factory=list)

    def column(self, name):
        return [row[name] for row in self.rows]

    def violations(self):
        """Columns whose gaps fail to decrease strictly (an all-zero tail counts as decreasing)."""
        bad = []
        for name in TREND_COLUMNS:
            g = self.column(name)
            if any(not (b < a or b == 0.0) for a, b in zip(g, g[1:])):
                bad.append(name)
        return bad

    def to_csv(self) -> str:
        lines = [",".join(COLUMNS)]
        for row in self.rows:
            cells = [str(row[c]) if c == "grid" else "%.17g" % row[c] for c in COLUMNS]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def common_grid(cfg: ProblemConfig, eps_list) -> int:
    """Smallest power-of-two cell count (at least ``cfg.grid_nodes``) with ``h <= eps/4`` for every eps."""
    need = max(4 * lattice_size(e) for e in eps_list)
    M = max(cfg.grid_nodes, 4)
    while M < need:
        M *= 2
    return M


def convergence_study(cfg: ProblemConfig, eps_list=(1 / 8, 1 / 16, 1 / 32), timing=False) -> ConvergenceReport:
    """Optimise and evaluate the eps-problems on one common grid and compare with the limit.

    ``seconds`` stays 0 unless ``timing`` is set, so repeated runs give
    identical rows; wall times are always kept in ``wall_seconds``.
    """
    eps_sorted = sorted(eps_list, reverse=True)
    M = common_grid(cfg, eps_sorted)
    base = dataclasses.replace(cfg, grid_nodes=M, eps=eps_sorted[0])
    report = ConvergenceReport()
    try:
        limit = LimitSolver(base)
        lim = limit.optimize()
        _, _, energy_limit = limit.uncontrolled()
    except ConvergenceError as exc:
        report.failure = f"limit solve: {exc}"
        return report
    norm0 = math.sqrt(integrate_volume(limit.grid, lim.u0, lim.u0))
    for eps in eps_sorted:
        start = time.perf_counter()
        try:
            sol = EpsProblem(dataclasses.replace(base, eps=eps)).optimize()
        except ConvergenceError as exc:
            report.failure = f"eps={eps:g}: {exc}"
            return report
        diff = sol.u_eps - lim.u0
        l2 = math.sqrt(integrate_volume(limit.grid, diff, diff))
        elapsed = time.perf_counter() - start
        report.wall_seconds.append(elapsed)
        report.rows.append(
            {
                "eps": eps,
                "grid": M,
                "J_eps": sol.J_eps,
                "J0": lim.J0_value,
                "rel_cost_gap": _rel_gap(sol.J_eps, lim.J0_value),
                "energy_eps": sol.energy_eps,
                "energy_limit": energy_limit,
                "rel_energy_gap": _rel_gap(sol.energy_eps, energy_limit),
                "l2_field_gap": l2 / norm0 if norm0 > 0 else l2,
                "opt_residual_eps": sol.opt_residual,
                "opt_residual_limit": lim.opt_residual,
                "seconds": elapsed if timing else 0.0,
            }
        )
    return report
