"""Optimal boundary control behind a critical layer of small Robin particles.

Two discrete solvers share one finite-difference grid: the point-particle
eps-problem (:mod:`doubleskin.perforated_solver`) and its homogenized limit
with effective Robin and adjoint coupling coefficients on the controlled face
(:mod:`doubleskin.limit_solver`).  :mod:`doubleskin.verify` holds independent
oracles and the eps-convergence study.
"""

from .core_model import (
    HomogConstants,
    ParticleLayer,
    ProblemConfig,
    build_particle_layer,
    capacity_function,
    constants,
    effective_robin,
    strange_term_coeff,
)
from .errors import (
    AssemblyError,
    ConfigError,
    ConvergenceError,
    DomainError,
    DoubleSkinError,
    GridMismatchError,
    GridTooCoarseError,
    UnsupportedDimensionError,
)
from .fields import CoefficientField, MatrixField
from .grid_fd import Grid, LinearSystem, assemble_divBgrad_rhs, assemble_poisson, solve
from .kernels import BACKEND
from .limit_solver import (
    LimitSolution,
    LimitSolver,
    eval_J0,
    solve_adjoint_limit,
    solve_coupled_limit,
    solve_state_limit,
    solve_uncontrolled_limit,
)
from .perforated_solver import (
    EpsProblem,
    EpsSolution,
    MonopoleState,
    energy_eps,
    eval_J_eps,
    optimize_eps,
    solve_state_eps,
)

__version__ = "0.1.0"
