"""Manufactured solutions shared by grid and acceptance tests."""

import numpy as np


def _s(p):
    return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])


def dirichlet_exact(p):
    return _s(p) * p[..., 2] * (1 - p[..., 2])


def dirichlet_source(p):
    return 2 * np.pi**2 * dirichlet_exact(p) + 2 * _s(p)


def robin_exact(p):
    z = p[..., 2]
    return _s(p) * (1 - z) * (1 + 2 * z)


def robin_source(p):
    return 2 * np.pi**2 * robin_exact(p) + 4 * _s(p)


def robin_data(sigma):
    # -d_z u* = -s at z = 0
    return lambda p: (sigma - 1.0) * _s(p)


def dirichlet_energy_exact():
    """int |grad u*|^2 for ``dirichlet_exact``, from symbolic integration."""
    import sympy

    x, y, z = sympy.symbols("x y z")
    u = sympy.sin(sympy.pi * x) * sympy.sin(sympy.pi * y) * z * (1 - z)
    grad2 = sum(sympy.diff(u, v) ** 2 for v in (x, y, z))
    return float(sympy.integrate(grad2, (x, 0, 1), (y, 0, 1), (z, 0, 1)))
