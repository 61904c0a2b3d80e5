import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doubleskin.core_model import (
    ParticleLayer,
    ProblemConfig,
    build_particle_layer,
    capacity_derivative,
    capacity_function,
    constants,
    effective_robin,
    strange_term_coeff,
)
from doubleskin.errors import ConfigError, DomainError, UnsupportedDimensionError
from doubleskin.fields import CoefficientField, MatrixField


def test_constants_n3_c0_1():
    c = constants(3, 1.0)
    assert c.omega_n == pytest.approx(4 * math.pi, rel=1e-15)
    assert c.A1 == pytest.approx(4 * math.pi, rel=1e-15)
    assert c.A2 == pytest.approx(4 * math.pi / 3, rel=1e-15)
    assert c.Cn == 1.0


def test_constants_n3_c0_half():
    c = constants(3, 0.5)
    assert c.A1 == pytest.approx(2 * math.pi, rel=1e-15)
    assert c.Cn == 2.0


def test_constants_n4():
    c = constants(4, 1.0)
    assert c.omega_n == pytest.approx(2 * math.pi**2, rel=1e-14)
    assert c.A1 == pytest.approx(4 * math.pi**2, rel=1e-14)
    assert c.A2 == pytest.approx(math.pi**2, rel=1e-14)
    assert c.Cn == 2.0


@given(st.integers(3, 8), st.floats(0.01, 10.0))
def test_constants_identities(n, C0):
    c = constants(n, C0)
    assert c.A2 * n == pytest.approx(c.A1, rel=1e-15)
    assert c.Cn * C0 == pytest.approx(n - 2, rel=1e-15)


def test_constants_rejects_n2():
    with pytest.raises(UnsupportedDimensionError):
        constants(2, 1.0)


def test_effective_robin_values():
    assert effective_robin(1.0, constants(3, 1.0)) == pytest.approx(2 * math.pi, rel=1e-15)
    assert effective_robin(1.0, constants(3, 0.5)) == pytest.approx(2 * math.pi / 3, rel=1e-15)
    c = constants(3, 1.0)
    assert effective_robin(1e12, c) == pytest.approx(c.A1, rel=1e-11)


def test_effective_robin_monotone_and_bounded():
    c = constants(3, 0.5)
    vals = effective_robin(np.geomspace(1e-4, 1e4, 200), c)
    assert np.all(np.diff(vals) > 0)
    assert np.all((vals > 0) & (vals < c.A1))


def test_effective_robin_rejects_nonpositive():
    with pytest.raises(DomainError):
        effective_robin(0.0, constants(3, 1.0))
    with pytest.raises(DomainError):
        strange_term_coeff(-1.0, 3.0, constants(3, 1.0))


def test_strange_term_values():
    c = constants(3, 1.0)
    assert strange_term_coeff(1.0, 3.0, c) == pytest.approx(math.pi, rel=1e-15)
    assert strange_term_coeff(2.0, 3.0, c) == pytest.approx(16 * math.pi / 9, rel=1e-15)
    assert strange_term_coeff(1.0, 0.0, c) == 0.0


def test_layer_eps_eighth():
    cfg = ProblemConfig(eps=1 / 8, C0=0.5)
    layer = build_particle_layer(cfg)
    assert layer.count == 49
    assert layer.radius == pytest.approx(1 / 128, rel=1e-15)
    assert layer.probe_radius == pytest.approx(1 / 32, rel=1e-15)
    assert np.all(layer.centers[:, 2] == 1 / 16)


def test_layer_eps_sixteenth():
    layer = build_particle_layer(ProblemConfig(eps=1 / 16, C0=0.5))
    assert layer.count == 225
    assert np.any(np.all(np.isclose(layer.centers, [1 / 16, 1 / 16, 1 / 32]), axis=1))


def test_layer_margin_violation_names_bound():
    with pytest.raises(ConfigError, match="eps/8"):
        ProblemConfig(eps=1 / 4, C0=1.0)


def test_non_integer_inverse_eps():
    with pytest.raises(ConfigError, match="integer"):
        ProblemConfig(eps=0.3)


def test_count_law():
    for m in (8, 16, 32, 64):
        deficit = 1 - (m - 1) ** 2 / m**2
        assert deficit == pytest.approx(2 / m - 1 / m**2)


def test_capacity_function_values():
    cfg = ProblemConfig(eps=1 / 8, C0=0.5)
    assert capacity_function(cfg.a_eps, cfg) == pytest.approx(1.0)
    assert capacity_function(cfg.eps / 4, cfg) == pytest.approx(0.0, abs=1e-15)
    assert capacity_function(1 / 64, cfg) == pytest.approx(1 / 3, rel=1e-14)
    with pytest.raises(DomainError):
        capacity_function(cfg.eps, cfg)


def test_capacity_flux_constant():
    cfg = ProblemConfig(eps=1 / 8, C0=0.5)
    r = np.linspace(cfg.a_eps * 1.01, cfg.eps / 4 * 0.99, 12)
    flux = r**2 * capacity_derivative(r, cfg)
    assert np.ptp(flux) / abs(flux[0]) < 1e-6
    step = 1e-7
    numeric = (capacity_function(r + step, cfg) - capacity_function(r - step, cfg)) / (2 * step)
    assert np.max(np.abs(r**2 * numeric - flux[0]) / abs(flux[0])) < 1e-3


def test_config_rejects_bad_fields():
    with pytest.raises(ConfigError, match="a must"):
        ProblemConfig(a=CoefficientField("const:-1"))
    with pytest.raises(ConfigError, match="positive definite"):
        ProblemConfig(B=MatrixField("const:[[1,0,0],[0,-1,0],[0,0,1]]"))
    with pytest.raises(ConfigError, match="symmetric"):
        ProblemConfig(B=MatrixField("const:[[1,0.5,0],[0,1,0],[0,0,1]]"))
    with pytest.raises(ConfigError, match="power of two"):
        ProblemConfig(grid_nodes=24)


def test_config_exponents():
    cfg = ProblemConfig()
    assert cfg.alpha == cfg.gamma == 2.0
    assert cfg.eigen_bounds() == (1.0, 1.0)


def test_single_particle_layer_checks():
    cfg = ProblemConfig(eps=1 / 4, C0=0.25)
    layer = ParticleLayer.single(cfg, [0.5, 0.5, 0.125])
    assert layer.count == 1
    with pytest.raises(ConfigError):
        ParticleLayer.single(cfg, [0.5, 0.5, 0.01])
    with pytest.raises(ConfigError, match="disjoint"):
        ParticleLayer(np.array([[0.5, 0.5, 0.2], [0.55, 0.5, 0.2]]), 0.001, 0.05, 0.2)
