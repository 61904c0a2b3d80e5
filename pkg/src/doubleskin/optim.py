"""Conjugate gradients on the reduced quadratic control problem.

Both solvers expose the cost as a strictly convex quadratic in the control
``v`` whose (scaled) gradient is ``N v + eta P(v)|Gamma0``.  The Hessian
product is the gradient map with the affine data switched off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .grid_fd import seq_dot


@dataclass
class ReducedResult:
    v: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def _norm(x):
    return float(np.sqrt(seq_dot(x, x)))


def minimize_quadratic(gradient, hessp, bigN, v0, tol, maxiter):
    """Minimise a quadratic given its gradient ``g(v) = N v + eta P(v)``.

    Parameters
    ----------
    gradient : callable
        ``v -> N v + eta P(v)`` on Gamma0 arrays.
    hessp : callable
        ``d -> N d + eta P_hom(d)``.
    bigN : float
        Control weight, used to split ``eta P`` off the gradient.
    tol : float
        Stop once ``||g|| <= tol * ||eta P||``.

    The residual is recomputed from ``gradient`` before returning, and the
    iteration restarts from there if recursion drift pushed it above ``tol``.
    """
    v = np.array(v0, dtype=float)
    history = []
    it = 0
    while True:
        g = gradient(v)
        ref = _norm(g - bigN * v)
        res = _norm(g)
        rel = res / ref if ref > 0 else (0.0 if res == 0 else np.inf)
        history.append(rel)
        if rel <= tol:
            return ReducedResult(v, it, rel, history)
        if it >= maxiter:
            raise ConvergenceError("reduced conjugate gradients did not converge", rel, it, v)
        r = -g
        p = r.copy()
        rr = seq_dot(r, r)
        while it < maxiter:
            Hp = hessp(p)
            alpha = rr / seq_dot(p, Hp)
            v += alpha * p
            r -= alpha * Hp
            it += 1
            rr_new = seq_dot(r, r)
            ref = _norm(-r - bigN * v)
            rel = np.sqrt(rr_new) / ref if ref > 0 else 0.0
            history.append(rel)
            if rel <= tol:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
