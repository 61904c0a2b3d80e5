"""Problem definition, homogenization constants and the particle lattice.

The physical setting is the unit box with the controlled face
``Gamma0 = {x_n = 0}`` and Dirichlet faces ``Gamma1`` elsewhere.  A layer of
small Robin spheres of radius ``a_eps = C0 * eps**alpha`` sits on the plane
``x_n = eps / 2``.  In the critical regime ``alpha = gamma = (n-1)/(n-2)`` the
layer collapses onto an effective Robin condition on ``Gamma0`` whose
coefficients are computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ConfigError, DomainError, UnsupportedDimensionError
from .fields import CoefficientField, MatrixField, check_symmetric


def _default_scalar(value):
    return field(default_factory=lambda: CoefficientField.constant(value))


@dataclass(frozen=True)
class ProblemConfig:
    """Full problem instance.

    ``grid_nodes`` is the number of grid *cells* per axis (a power of two);
    the grid then has ``grid_nodes + 1`` nodes per axis.
    """

    n: int = 3
    eps: float = 0.125
    C0: float = 0.5
    eta: float = 1.0
    bigN: float = 1.0
    f: CoefficientField = _default_scalar(1.0)
    a: CoefficientField = _default_scalar(1.0)
    B: MatrixField = field(default_factory=MatrixField.identity)
    uT: CoefficientField = _default_scalar(0.0)
    grid_nodes: int = 32
    tol_linear: float = 1e-10
    tol_opt: float = 1e-10
    max_iter: int = 500

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise UnsupportedDimensionError(f"dimension n={self.n} unsupported; the critical scaling needs n >= 3")
        for name in ("f", "a", "uT", "B"):
            if getattr(self, name).n != self.n:
                raise ConfigError(f"field {name} was built for n={getattr(self, name).n}, config has n={self.n}")
        if not (self.C0 > 0 and math.isfinite(self.C0)):
            raise ConfigError("c0 must be a positive number")
        if not (self.eta > 0 and self.bigN > 0):
            raise ConfigError("eta and bigN must be positive")
        if not (self.tol_linear > 0 and self.tol_opt > 0):
            raise ConfigError("tolerances must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError("max_iter must be a positive integer")
        m = self.grid_nodes
        if int(m) != m or m < 4 or (m & (m - 1)):
            raise ConfigError(f"grid_nodes={m} must be a power of two >= 4")
        lattice_size(self.eps)
        check_radius_margin(self.n, self.eps, self.C0)
        self._check_fields()

    @property
    def alpha(self) -> float:
        return (self.n - 1) / (self.n - 2)

    gamma = alpha

    @property
    def a_eps(self) -> float:
        return self.C0 * self.eps**self.alpha

    @property
    def m(self) -> int:
        return lattice_size(self.eps)

    def _check_fields(self):
        n = self.n
        m = self.m
        M = self.grid_nodes
        lateral = [np.arange(1, m) / m] * (n - 1)
        centres = np.stack(np.meshgrid(*lateral, indexing="ij"), axis=-1).reshape(-1, n - 1)
        centres = np.hstack([centres, np.full((len(centres), 1), self.eps / 2)])
        face = [np.arange(1, M) / M] * (n - 1)
        g0 = np.stack(np.meshgrid(*face, indexing="ij"), axis=-1).reshape(-1, n - 1)
        g0 = np.hstack([g0, np.zeros((len(g0), 1))])
        a_vals = self.a(np.vstack([centres, g0]))
        if not np.all(np.isfinite(a_vals)) or np.min(a_vals) <= 0:
            raise ConfigError(f"a must satisfy a(x) >= a0 > 0; found min {np.min(a_vals):.6g}")
        coarse = np.stack(np.meshgrid(*([np.linspace(0, 1, 9)] * n), indexing="ij"), axis=-1).reshape(-1, n)
        mats = self.B(np.vstack([coarse, centres]))
        if not check_symmetric(mats):
            raise ConfigError("B must be symmetric")
        eig = np.linalg.eigvalsh(mats)
        if np.min(eig) <= 0:
            raise ConfigError(f"B must be uniformly positive definite; smallest eigenvalue {np.min(eig):.6g}")
        for name in ("f", "uT"):
            if not np.all(np.isfinite(getattr(self, name)(coarse))):
                raise ConfigError(f"field {name} is not finite on the box")

    def eigen_bounds(self, points=None):
        """Sampled (lambda1, lambda2) bounds of B."""
        if points is None:
            points = np.stack(np.meshgrid(*([np.linspace(0, 1, 9)] * self.n), indexing="ij"), axis=-1)
        eig = np.linalg.eigvalsh(self.B(np.asarray(points).reshape(-1, self.n)))
        return float(eig.min()), float(eig.max())


def lattice_size(eps: float) -> int:
    """Return ``m = 1/eps``, requiring an integer ``m >= 4``."""
    if not (eps > 0 and math.isfinite(eps)):
        raise ConfigError(f"eps={eps} must be positive")
    inv = 1.0 / eps
    m = int(round(inv))
    if abs(inv - m) > 1e-9 * max(m, 1):
        raise ConfigError(f"1/eps must be an integer; got 1/eps = {inv:.12g}")
    if m < 4:
        raise ConfigError(f"1/eps = {m} is too small; need 1/eps >= 4")
    return m


def check_radius_margin(n, eps, C0):
    radius = C0 * eps ** ((n - 1) / (n - 2))
    if not radius < eps / 8:
        raise ConfigError(
            f"particle radius a_eps = C0*eps^alpha = {radius:.6g} violates a_eps < eps/8 = {eps / 8:.6g}"
        )
    return radius


@dataclass(frozen=True)
class HomogConstants:
    n: int
    C0: float
    omega_n: float
    A1: float
    A2: float
    Cn: float


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def constants(n: int, C0: float) -> HomogConstants:
    """Strange-term constants ``A1 = (n-2) C0^(n-2) omega_n``, ``A2 = A1/n``, ``Cn = (n-2)/C0``."""
    if int(n) != n or n < 3:
        raise UnsupportedDimensionError(f"dimension n={n} unsupported; need n >= 3")
    if not C0 > 0:
        raise DomainError("C0 must be positive")
    omega = sphere_area(n)
    A1 = (n - 2) * C0 ** (n - 2) * omega
    return HomogConstants(n=n, C0=C0, omega_n=omega, A1=A1, A2=A1 / n, Cn=(n - 2) / C0)


def _positive(a_val):
    a = np.asarray(a_val, dtype=float)
    if not np.all(a > 0):
        raise DomainError("Robin coefficient a must be strictly positive")
    return a


def effective_robin(a_val, c: HomogConstants):
    """Effective Robin coefficient ``A1 a / (a + Cn)`` on Gamma0 (vectorised)."""
    a = _positive(a_val)
    out = c.A1 * a / (a + c.Cn)
    return float(out) if out.ndim == 0 else out


def strange_term_coeff(a_val, trB_val, c: HomogConstants):
    """Adjoint coupling coefficient ``A2 trB a^2 / (a + Cn)^2`` (vectorised)."""
    a = _positive(a_val)
    out = c.A2 * np.asarray(trB_val, dtype=float) * a**2 / (a + c.Cn) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ParticleLayer:
    """Particle centres with common radius and probe-ball radius.

    The lattice constructor is :func:`build_particle_layer`; arbitrary centre
    sets (e.g. a single particle) may be built directly and are checked for
    disjoint probe balls that stay inside the box.
    """

    centers: np.ndarray
    radius: float
    probe_radius: float
    eps: float

    def __post_init__(self):
        centres = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if centres.size == 0:
            centres = centres.reshape(0, 3 if centres.ndim < 2 else max(centres.shape[-1], 1))
        object.__setattr__(self, "centers", centres)
        if not 0 < self.radius < self.probe_radius / 2:
            raise ConfigError(
                f"particle radius {self.radius:.6g} must lie in (0, eps/8 = {self.probe_radius / 2:.6g})"
            )
        if len(centres):
            gap = min(np.min(centres), np.min(1.0 - centres))
            if gap <= self.probe_radius:
                raise ConfigError("probe balls must not touch the boundary of the box")
        if len(centres) > 1 and np.min(pdist(centres)) <= 2 * self.probe_radius:
            raise ConfigError("probe balls must be pairwise disjoint")

    @property
    def count(self) -> int:
        return len(self.centers)

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def single(cls, cfg: ProblemConfig, center, eps: float | None = None) -> "ParticleLayer":
        """One particle at ``center``; ``eps`` overrides the lattice period of ``cfg``."""
        eps = cfg.eps if eps is None else float(eps)
        radius = cfg.C0 * eps**cfg.alpha
        return cls(np.asarray(center, dtype=float)[None, :], radius, eps / 4, eps)

    @classmethod
    def empty(cls, cfg: ProblemConfig) -> "ParticleLayer":
        return cls(np.zeros((0, cfg.n)), cfg.a_eps, cfg.eps / 4, cfg.eps)


def build_particle_layer(cfg: ProblemConfig) -> ParticleLayer:
    """Lattice of centres ``eps * (j_1, ..., j_{n-1}, 1/2)``, ``1 <= j_i <= m-1``.

    Cells touching the lateral walls are left out so every cell lies inside
    the box; the count is ``(m-1)^(n-1)``.
    """
    m = lattice_size(cfg.eps)
    radius = check_radius_margin(cfg.n, cfg.eps, cfg.C0)
    j = np.arange(1, m)
    lateral = np.stack(np.meshgrid(*([j] * (cfg.n - 1)), indexing="ij"), axis=-1).reshape(-1, cfg.n - 1)
    centres = np.hstack([lateral / m, np.full((len(lateral), 1), 0.5 / m)])
    return ParticleLayer(centres, radius, cfg.eps / 4, cfg.eps)


def capacity_function(r, cfg: ProblemConfig):
    """Closed-form capacity potential of one particle inside its probe ball.

    Harmonic in the shell ``a_eps <= r <= eps/4`` with value 1 on the particle
    and 0 on the probe sphere.
    """
    n = cfg.n
    a, R = cfg.a_eps, cfg.eps / 4
    rr = np.asarray(r, dtype=float)
    slack = 1e-12 * R
    if np.any(rr < a - slack) or np.any(rr > R + slack):
        raise DomainError(f"r must lie in the shell [{a:.6g}, {R:.6g}]")
    rr = np.clip(rr, a, R)
    out = (rr ** (2 - n) - R ** (2 - n)) / (a ** (2 - n) - R ** (2 - n))
    return float(out) if out.ndim == 0 else out


def capacity_derivative(r, cfg: ProblemConfig):
    n = cfg.n
    a, R = cfg.a_eps, cfg.eps / 4
    rr = np.asarray(r, dtype=float)
    return (2 - n) * rr ** (1 - n) / (a ** (2 - n) - R ** (2 - n))
