"""Hot loops with a compiled backend and a numpy fallback.

The compiled module ``doubleskin._kernels`` is used when it was built and
``DSF_PURE_PYTHON`` is unset; otherwise the numpy versions below are used.
Both backends expose the same three functions.
"""

import os

import numpy as np


def _edge_stencil_py(w, cx, cy, cz, out):
    out[...] = 0.0
    fx = cx * (w[:-1] - w[1:])
    out[:-1] += fx
    out[1:] -= fx
    fy = cy * (w[:, :-1] - w[:, 1:])
    out[:, :-1] += fy
    out[:, 1:] -= fy
    fz = cz * (w[:, :, :-1] - w[:, :, 1:])
    out[:, :, :-1] += fz
    out[:, :, 1:] -= fz
    return out


def _tridiag_solve_py(diag, off, rhs):
    # Vectorised Thomas sweep over the batch axis; loops over the short axis.
    P, K = rhs.shape
    cp = np.empty((P, K))
    denom = diag[:, 0].copy()
    if K > 1:
        cp[:, 0] = off[0] / denom
    rhs[:, 0] /= denom
    for k in range(1, K):
        denom = diag[:, k] - off[k - 1] * cp[:, k - 1]
        if k < K - 1:
            cp[:, k] = off[k] / denom
        rhs[:, k] = (rhs[:, k] - off[k - 1] * rhs[:, k - 1]) / denom
    for k in range(K - 2, -1, -1):
        rhs[:, k] -= cp[:, k] * rhs[:, k + 1]
    return rhs


def _dot_py(a, b):
    return float(np.dot(a, b))


BACKEND = "python"
edge_stencil = _edge_stencil_py
tridiag_solve = _tridiag_solve_py
dot = _dot_py

if not os.environ.get("DSF_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        edge_stencil = _kernels.edge_stencil
        tridiag_solve = _kernels.tridiag_solve
        dot = _kernels.dot


def threads() -> int:
    """Worker count for FFTs, capped by ``DSF_THREADS``."""
    try:
        return max(1, int(os.environ.get("DSF_THREADS", "1")))
    except ValueError:
        return 1
