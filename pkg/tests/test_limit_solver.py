import dataclasses
import math

import numpy as np
import pytest

from doubleskin.core_model import ProblemConfig
from doubleskin.fields import CoefficientField, MatrixField
from doubleskin.grid_fd import PoissonOperator, assemble_poisson, solve
from doubleskin.limit_solver import (
    LimitSolver,
    eval_J0,
    solve_adjoint_limit,
    solve_coupled_limit,
    solve_state_limit,
    solve_uncontrolled_limit,
)
from doubleskin.verify import gradient_check, probe_optimum

ZERO = CoefficientField.constant(0.0)


@pytest.fixture(scope="module")
def cfg16():
    return ProblemConfig(grid_nodes=16)


@pytest.fixture(scope="module")
def rich_cfg():
    """Variable a, anisotropic B and a non-zero target on 16^3."""
    return ProblemConfig(
        grid_nodes=16,
        a=CoefficientField("poly:1 + x1*x2"),
        B=MatrixField("const:[[2,0.3,0],[0.3,1,0.1],[0,0.1,1.5]]"),
        uT=CoefficientField("poly:x3*(1-x3)"),
        eta=2.0,
        bigN=0.5,
    )


def test_zero_data_state_is_zero():
    cfg = ProblemConfig(grid_nodes=8, f=ZERO)
    u = solve_state_limit(cfg, np.zeros((7, 7)))
    assert np.max(np.abs(u)) == 0.0


def test_effective_coefficient_profile():
    # C0 = 1, a = 1 gives the Robin coefficient 2 pi; with the linear profile
    # as lateral data the discrete solution is exact.
    cfg = ProblemConfig(grid_nodes=16, C0=1.0, eps=1 / 16, f=ZERO)
    s = LimitSolver(cfg)
    assert np.allclose(s.sigma, 2 * math.pi, rtol=1e-15)
    v = 0.7
    profile = lambda p: v * (1 - p[..., 2]) / (1 + 2 * math.pi)
    u = solve(assemble_poisson(s.grid, s.sigma, f=0.0, g=v, dirichlet=profile, tol=1e-13))
    assert np.max(np.abs(u - s.grid.sample(profile))) <= 1e-8


def test_state_affine(cfg16, rng):
    v1, v2 = rng.standard_normal((2, 15, 15))
    lhs = solve_state_limit(cfg16, v1 + v2)
    rhs = solve_state_limit(cfg16, v1) + solve_state_limit(cfg16, v2) - solve_state_limit(cfg16, 0 * v1)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_variable_robin_uses_iterative_path(rich_cfg, rng):
    s = LimitSolver(rich_cfg)
    assert not s.uniform_sigma
    v = rng.standard_normal(s.grid.face_shape)
    u = s.state(v)
    rhs = s.load + s.grid.lift_boundary(v)
    res = PoissonOperator(s.grid, s.sigma).apply(u) - np.where(s.grid.free_mask(), rhs, 0)
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(rhs)


def test_adjoint_zero_when_state_and_target_vanish():
    cfg = ProblemConfig(grid_nodes=8)
    assert np.max(np.abs(solve_adjoint_limit(cfg, np.zeros((9, 9, 9))))) == 0.0


def test_adjoint_equation_residual(rich_cfg):
    s = LimitSolver(rich_cfg)
    u = s.state(np.zeros(s.grid.face_shape))
    P = s.adjoint(u)
    rhs = s.bform.apply(u - s.uT)
    rhs[s.grid.gamma0] += s.grid.h**2 * s.tau * u[s.grid.gamma0]
    res = s.op.apply(P) - np.where(s.grid.free_mask(), rhs, 0)
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(rhs)


def test_adjoint_independent_of_weights(cfg16):
    u = solve_state_limit(cfg16, np.zeros((15, 15)))
    scaled = dataclasses.replace(cfg16, eta=2.0, bigN=2.0)
    np.testing.assert_array_equal(solve_adjoint_limit(cfg16, u), solve_adjoint_limit(scaled, u))


def test_degenerate_coupled():
    cfg = ProblemConfig(grid_nodes=16, f=ZERO)
    sol = solve_coupled_limit(cfg)
    for arr in (sol.u0, sol.P0, sol.v0):
        assert np.max(np.abs(arr)) == 0.0
    assert sol.J0_value == 0.0


def test_coupled_optimality_and_minimality(rich_cfg, rng):
    s = LimitSolver(rich_cfg)
    sol = s.optimize()
    eta, N = rich_cfg.eta, rich_cfg.bigN
    trace = sol.P0[s.grid.gamma0]
    assert np.linalg.norm(N * sol.v0 + eta * trace) <= rich_cfg.tol_opt * np.linalg.norm(eta * trace) * 1.0001
    np.testing.assert_allclose(sol.v0, -(eta / N) * trace, atol=1e-9 * np.max(np.abs(trace)))
    J0 = sol.J0_value
    assert J0 <= eval_J0(rich_cfg, np.zeros(s.grid.face_shape), s.state(np.zeros(s.grid.face_shape)))
    for _ in range(10):
        v = sol.v0 + 0.1 * rng.standard_normal(sol.v0.shape)
        assert J0 <= eval_J0(rich_cfg, v, s.state(v))


def test_coupled_matches_dense_probe(rich_cfg):
    s = LimitSolver(rich_cfg)
    v_ref = probe_optimum(s)
    v = s.optimize().v0
    assert np.linalg.norm(v - v_ref) / np.linalg.norm(v_ref) <= 1e-6


def test_unique_from_two_starts(cfg16, rng):
    a = solve_coupled_limit(cfg16).v0
    b = solve_coupled_limit(cfg16, v_init=rng.standard_normal(a.shape)).v0
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-8


def test_gradient_consistency(rich_cfg):
    assert gradient_check("limit", rich_cfg, n_dirs=5, seed=3) <= 1e-4


def test_J0_zero_data():
    cfg = ProblemConfig(grid_nodes=8, f=ZERO)
    v = np.zeros((7, 7))
    assert eval_J0(cfg, v, solve_state_limit(cfg, v)) == 0.0


def test_J0_isolates_strange_term(tmp_path):
    base = ProblemConfig(grid_nodes=8)
    u = solve_state_limit(base, np.zeros((7, 7)))
    np.save(tmp_path / "u.npy", u)
    cfg = dataclasses.replace(base, uT=CoefficientField("samples:u.npy", base_dir=str(tmp_path)))
    s = LimitSolver(cfg)
    expected = 0.5 * cfg.eta * s.grid.h**2 * float(np.sum(s.tau * u[s.grid.gamma0] ** 2))
    assert eval_J0(cfg, np.zeros((7, 7)), u) == pytest.approx(expected, rel=1e-12)


def test_J0_convex(cfg16, rng):
    s = LimitSolver(cfg16)
    J = lambda v: s.cost(v, s.state(v))
    for _ in range(5):
        v1, v2 = rng.standard_normal((2, 15, 15))
        assert J(0.5 * (v1 + v2)) <= 0.5 * (J(v1) + J(v2))


def test_uncontrolled_zero_source():
    u, P, energy = solve_uncontrolled_limit(ProblemConfig(grid_nodes=8, f=ZERO))
    assert energy == 0.0 and np.max(np.abs(u)) == 0.0


def test_uncontrolled_energy_identity_and_scaling():
    cfg = ProblemConfig(grid_nodes=32)
    s = LimitSolver(cfg)
    u, P, energy = s.uncontrolled()
    assert abs(float(np.sum(s.load * P)) - energy) / energy <= 5e-3
    _, _, e2 = solve_uncontrolled_limit(dataclasses.replace(cfg, f=CoefficientField.constant(2.0)))
    assert e2 == pytest.approx(4 * energy, rel=1e-12)
