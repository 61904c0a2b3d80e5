"""Second-order finite differences on the structured unit-box grid.

Layout
------
Nodal arrays have shape ``(M+1, M+1, M+1)`` indexed ``[i, j, k]`` with
``x = (i h, j h, k h)`` and ``h = 1/M``.  ``k = 0`` is the controlled face
Gamma0.  Nodes on the lateral faces, the top face and the edges of the bottom
face are Dirichlet (Gamma1) nodes; the unknowns ("free" nodes) are the block
``[1:M, 1:M, 0:M]``.  Boundary fields on Gamma0 are ``(M-1, M-1)`` arrays.

All operators are in weak (quadrature-weighted) form: the stiffness of an
edge is ``h * (number of adjacent cells) / 4`` so that the Robin face rows
carry half-cell weights and every assembled operator is symmetric.  The same
edge form evaluates the B-weighted H1 seminorm, which makes the discrete
seminorm of ``w = x_3`` exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn

from . import kernels
from .errors import AssemblyError, ConfigError, ConvergenceError, GridMismatchError
from .fields import check_symmetric

__all__ = [
    "BForm",
    "Grid",
    "LinearSystem",
    "PoissonOperator",
    "SpectralSolver",
    "assemble_divBgrad_rhs",
    "assemble_poisson",
    "integrate_gamma0",
    "integrate_volume",
    "l2_norm",
    "pcg",
    "seq_dot",
    "solve",
    "unit_conductances",
    "weighted_h1_seminorm",
]


class Grid:
    """Uniform grid with ``cells`` intervals per axis on the unit cube."""

    def __init__(self, cells: int, n: int = 3):
        if n != 3:
            raise ConfigError("grid solves are implemented for n = 3 only")
        if int(cells) != cells or cells < 4 or (cells & (cells - 1)):
            raise ConfigError(f"cells per axis must be a power of two >= 4, got {cells}")
        self.cells = int(cells)
        self.n = n
        self.h = 1.0 / self.cells

    def __repr__(self):
        return f"Grid(cells={self.cells})"

    def __eq__(self, other):
        return isinstance(other, Grid) and other.cells == self.cells

    def __hash__(self):
        return hash(("Grid", self.cells))

    @property
    def shape(self):
        return (self.cells + 1,) * 3

    @property
    def face_shape(self):
        return (self.cells - 1, self.cells - 1)

    @property
    def free(self):
        """Slice of the free-node block inside a nodal array."""
        M = self.cells
        return (slice(1, M), slice(1, M), slice(0, M))

    @property
    def gamma0(self):
        """Slice of the Gamma0 nodes inside a nodal array."""
        M = self.cells
        return (slice(1, M), slice(1, M), 0)

    def coords(self):
        return np.linspace(0.0, 1.0, self.cells + 1)

    def points(self):
        x = self.coords()
        return np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)

    def cell_centers(self):
        c = (np.arange(self.cells) + 0.5) * self.h
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)

    def gamma0_points(self):
        x = self.coords()[1:-1]
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y, np.zeros_like(X)], axis=-1)

    def face_points(self):
        x = self.coords()
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y, np.zeros_like(X)], axis=-1)

    def classify(self):
        """Node classes: 0 interior, 1 Gamma0, 2 Gamma1."""
        out = np.full(self.shape, 2, dtype=np.int8)
        M = self.cells
        out[1:M, 1:M, 1:M] = 0
        out[1:M, 1:M, 0] = 1
        return out

    def free_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.free] = True
        return mask

    def zeros(self):
        return np.zeros(self.shape)

    def sample(self, fn):
        """Evaluate a field rule (callable of points) at every node."""
        return np.asarray(fn(self.points()), dtype=float)

    def trapezoid_1d(self):
        w = np.full(self.cells + 1, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def volume_weights(self):
        w = self.trapezoid_1d()
        return w[:, None, None] * w[None, :, None] * w[None, None, :]

    def face_weights(self):
        w = self.trapezoid_1d()
        return np.outer(w, w)

    def check_field(self, arr, name="field"):
        arr = np.asarray(arr, dtype=float)
        if arr.shape != self.shape:
            raise GridMismatchError(f"{name} has shape {arr.shape}, grid expects {self.shape}")
        return arr

    def lift_boundary(self, v):
        """Gamma0 array ``(M-1, M-1)`` -> weighted nodal load ``h^2 v`` on Gamma0."""
        v = np.asarray(v, dtype=float)
        if v.shape != self.face_shape:
            raise GridMismatchError(f"boundary field has shape {v.shape}, grid expects {self.face_shape}")
        out = self.zeros()
        out[self.gamma0] = self.h**2 * v
        return out


def seq_dot(a, b) -> float:
    return kernels.dot(np.ascontiguousarray(a, dtype=float).ravel(), np.ascontiguousarray(b, dtype=float).ravel())


# ----------------------------------------------------------------------------
# Edge-conductance operators


def _edge_sum(cellval, axis):
    """Sum the values of the (up to four) cells adjacent to each edge along ``axis``."""
    M = cellval.shape[0]
    others = [d for d in range(3) if d != axis]
    pad = [(0, 0)] * 3
    for d in others:
        pad[d] = (1, 1)
    p = np.pad(cellval, pad)
    out = 0.0
    for s0 in (slice(0, M + 1), slice(1, M + 2)):
        for s1 in (slice(0, M + 1), slice(1, M + 2)):
            idx = [slice(None)] * 3
            idx[others[0]] = s0
            idx[others[1]] = s1
            out = out + p[tuple(idx)]
    return out


def _cell_grad(w, axis, h):
    """Cell-averaged derivative along ``axis`` (mean of the cell's four edges)."""
    d = np.diff(w, axis=axis)
    others = [x for x in range(3) if x != axis]
    for ax in others:
        d = 0.5 * (np.take(d, range(d.shape[ax] - 1), axis=ax) + np.take(d, range(1, d.shape[ax]), axis=ax))
    return d / h


def _cell_grad_T(c, axis, h, shape):
    """Transpose of :func:`_cell_grad`: cell array -> nodal array."""
    others = [x for x in range(3) if x != axis]
    d = c / h
    for ax in reversed(others):
        pad_lo = [(0, 0)] * 3
        pad_hi = [(0, 0)] * 3
        pad_lo[ax] = (1, 0)
        pad_hi[ax] = (0, 1)
        d = 0.5 * (np.pad(d, pad_lo) + np.pad(d, pad_hi))
    out = np.zeros(shape)
    sl_lo = [slice(None)] * 3
    sl_hi = [slice(None)] * 3
    sl_lo[axis] = slice(0, -1)
    sl_hi[axis] = slice(1, None)
    out[tuple(sl_lo)] -= d
    out[tuple(sl_hi)] += d
    return out


def unit_conductances(grid: Grid):
    """Edge conductances of the identity metric: ``h * (adjacent cells) / 4``."""
    ones = np.ones((grid.cells,) * 3)
    return tuple(np.ascontiguousarray(grid.h * _edge_sum(ones, d) / 4.0) for d in range(3))


class BForm:
    """Discrete B-weighted H1 form ``w -> sum_cells h^3 <B grad w, grad w>``.

    Diagonal entries of B use the four parallel cell edges per direction;
    off-diagonal entries couple cell-averaged derivatives.  ``cell_mask``
    (``(M, M, M)`` of 0/1) removes cells from the integral.
    """

    def __init__(self, grid: Grid, B, cell_mask=None):
        self.grid = grid
        h = grid.h
        M = grid.cells
        if callable(B):
            mats = np.asarray(B(grid.cell_centers()), dtype=float)
        else:
            mats = np.broadcast_to(np.asarray(B, dtype=float), (M, M, M, 3, 3))
        if not check_symmetric(mats):
            raise AssemblyError("B must be symmetric at every cell centre")
        mask = None if cell_mask is None else np.asarray(cell_mask, dtype=float)
        const_diag = None
        if mask is None and not callable(B):
            const_diag = np.diagonal(np.asarray(B, dtype=float))
        if const_diag is not None:
            unit = unit_conductances(grid)
            self.cond = tuple(np.ascontiguousarray(const_diag[d] * unit[d]) for d in range(3))
        else:
            self.cond = tuple(
                np.ascontiguousarray(h * _edge_sum(mats[..., d, d] * (1.0 if mask is None else mask), d) / 4.0)
                for d in range(3)
            )
        self.offdiag = []
        for d, e in ((0, 1), (0, 2), (1, 2)):
            coef = mats[..., d, e]
            if np.any(coef != 0):
                c = h**3 * coef * (1.0 if mask is None else mask)
                self.offdiag.append((d, e, np.ascontiguousarray(c)))
        self._buf = np.empty(grid.shape)

    def apply(self, w):
        w = np.ascontiguousarray(self.grid.check_field(w))
        out = np.empty(self.grid.shape)
        kernels.edge_stencil(w, *self.cond, out)
        if self.offdiag:
            h = self.grid.h
            grads = [_cell_grad(w, d, h) for d in range(3)]
            for d, e, c in self.offdiag:
                out += _cell_grad_T(c * grads[e], d, h, self.grid.shape)
                out += _cell_grad_T(c * grads[d], e, h, self.grid.shape)
        return out

    def value(self, w) -> float:
        return seq_dot(w, self.apply(w))

    def bilinear(self, w1, w2) -> float:
        return seq_dot(w1, self.apply(w2))


class PoissonOperator:
    """Free-node operator ``-Laplace`` with Robin coefficient ``sigma`` on Gamma0.

    Acts on nodal arrays that vanish on Dirichlet nodes; the output is zero
    outside the free block.
    """

    def __init__(self, grid: Grid, sigma=0.0):
        self.grid = grid
        self.cond = unit_conductances(grid)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), grid.face_shape)
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise AssemblyError("Robin coefficient must be finite and non-negative")
        self.sigma = np.array(sig)
        self._mask = grid.free_mask()

    def apply(self, w):
        w = np.ascontiguousarray(w, dtype=float)
        out = np.empty(self.grid.shape)
        kernels.edge_stencil(w, *self.cond, out)
        out[self.grid.gamma0] += self.grid.h**2 * self.sigma * w[self.grid.gamma0]
        out[~self._mask] = 0.0
        return out

    def diagonal(self):
        d = np.zeros(self.grid.shape)
        cx, cy, cz = self.cond
        d[:-1] += cx
        d[1:] += cx
        d[:, :-1] += cy
        d[:, 1:] += cy
        d[:, :, :-1] += cz
        d[:, :, 1:] += cz
        d[self.grid.gamma0] += self.grid.h**2 * self.sigma
        return d


class SpectralSolver:
    """Direct solver for :class:`PoissonOperator` with a constant Robin coefficient.

    Lateral sine transforms diagonalise the Dirichlet directions; each lateral
    mode leaves a symmetric tridiagonal system along ``x_3``.
    """

    def __init__(self, grid: Grid, sigma: float = 0.0):
        if sigma < 0 or not np.isfinite(sigma):
            raise AssemblyError("Robin coefficient must be finite and non-negative")
        self.grid = grid
        self.sigma = float(sigma)
        M, h = grid.cells, grid.h
        lam = 4.0 * np.sin(np.pi * np.arange(1, M) / (2 * M)) ** 2
        mu = (lam[:, None] + lam[None, :]).ravel()
        level = np.full(M, h)
        level[0] = h / 2
        vert = np.full(M, 2 * h)
        vert[0] = h + h**2 * self.sigma
        self.diag = np.ascontiguousarray(mu[:, None] * level[None, :] + vert[None, :])
        self.off = np.full(M - 1, -h)

    def _forward(self, block):
        return dstn(block, type=1, axes=(0, 1), norm="ortho", workers=kernels.threads())

    def solve(self, rhs):
        """Solve ``A u = rhs`` on the free block; returns a nodal array."""
        M = self.grid.cells
        b = np.asarray(rhs, dtype=float)[self.grid.free]
        bh = np.ascontiguousarray(self._forward(b)).reshape((M - 1) ** 2, M)
        kernels.tridiag_solve(self.diag, self.off, bh)
        out = np.zeros(self.grid.shape)
        out[self.grid.free] = self._forward(bh.reshape(M - 1, M - 1, M))
        return out

    def transform(self, plane):
        """Orthonormal lateral sine transform of a ``(M-1, M-1)`` array."""
        return dstn(plane, type=1, norm="ortho", workers=kernels.threads())

    def level_response(self, source_level):
        """Per-mode response ``G[p, k]`` to a unit source on level ``source_level``."""
        M = self.grid.cells
        rhs = np.zeros(((M - 1) ** 2, M))
        rhs[:, source_level] = 1.0
        kernels.tridiag_solve(self.diag, self.off, rhs)
        return rhs


# ----------------------------------------------------------------------------
# Sparse assembly and Krylov solve


@dataclass
class LinearSystem:
    """Sparse system on the free nodes of ``grid`` (or a bare system when ``grid`` is None)."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid | None = None
    free: np.ndarray | None = None
    dirichlet_values: np.ndarray | None = None
    tol: float = 1e-10
    maxiter: int = 20000
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise AssemblyError("system matrix must be square")
        if self.matrix.shape[0] != len(self.rhs):
            raise AssemblyError("right-hand side length does not match the matrix")


def _as_face(grid, value, name):
    if callable(value):
        value = value(grid.gamma0_points())
    arr = np.broadcast_to(np.asarray(value, dtype=float), grid.face_shape)
    if not np.all(np.isfinite(arr)):
        raise AssemblyError(f"{name} must be finite")
    return np.array(arr)


def _as_nodal(grid, value):
    if value is None:
        return grid.zeros()
    if callable(value):
        return grid.sample(value)
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), grid.shape))


def _edge_matrix(grid, cond, diag_extra=None):
    shape = grid.shape
    idx = np.arange(np.prod(shape)).reshape(shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(shape) if diag_extra is None else np.array(diag_extra, dtype=float)
    for d, c in enumerate(cond):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        a, b = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        cv = c.ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [-cv, -cv]
        diag[tuple(lo)] += c
        diag[tuple(hi)] += c
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    n = idx.size
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()


def assemble_poisson(grid: Grid, robin_coeff=0.0, f=None, g=None, dirichlet=None, bottom="robin",
                     tol=1e-10, maxiter=20000) -> LinearSystem:
    """Assemble ``-Laplace u = f`` with ``d_nu u + sigma u = g`` on Gamma0 and Dirichlet data elsewhere.

    Parameters
    ----------
    robin_coeff : float, array ``(M-1, M-1)`` or callable
        Robin coefficient ``sigma >= 0`` on Gamma0 (ignored when ``bottom='dirichlet'``).
    f : float, nodal array or callable, optional
        Volume source.
    g : float, array ``(M-1, M-1)`` or callable, optional
        Robin/Neumann data on Gamma0.
    dirichlet : float, nodal array or callable, optional
        Dirichlet values; only the values on Dirichlet nodes are used.
    bottom : {'robin', 'dirichlet'}
        Condition on the bottom face.
    """
    if bottom not in ("robin", "dirichlet"):
        raise ConfigError(f"bottom must be 'robin' or 'dirichlet', got {bottom!r}")
    sigma = _as_face(grid, robin_coeff, "Robin coefficient")
    if np.any(sigma < 0):
        raise AssemblyError("Robin coefficient must be non-negative on Gamma0")
    cond = unit_conductances(grid)
    free = grid.free_mask()
    if bottom == "dirichlet":
        free[:, :, 0] = False
    extra = grid.zeros()
    if bottom == "robin":
        extra[grid.gamma0] = grid.h**2 * sigma
    A_full = _edge_matrix(grid, cond, extra)
    fid = np.flatnonzero(free.ravel())
    did = np.flatnonzero(~free.ravel())
    A = A_full[fid][:, fid].tocsr()
    load = grid.volume_weights() * _as_nodal(grid, f)
    if bottom == "robin" and g is not None:
        load[grid.gamma0] += grid.h**2 * _as_face(grid, g, "Robin data")
    dvals = _as_nodal(grid, dirichlet)
    dvals[free] = 0.0
    rhs = load.ravel()[fid] - A_full[fid][:, did] @ dvals.ravel()[did]
    return LinearSystem(A, rhs, grid, free, dvals, tol=tol, maxiter=maxiter, info={"bottom": bottom})


def pcg(apply, b, precond=None, tol=1e-10, maxiter=20000, x0=None):
    """Preconditioned conjugate gradients with sequential inner products.

    Returns ``(x, iterations, relative_residual)``; raises
    :class:`ConvergenceError` when ``maxiter`` is exhausted.
    """
    if not tol > 0:
        raise ConfigError("solver tolerance must be positive")
    b = np.asarray(b, dtype=float)
    bnorm = np.sqrt(seq_dot(b, b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    r = b - apply(x) if x0 is not None else b.copy()
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = seq_dot(r, z)
    res = np.sqrt(seq_dot(r, r)) / bnorm
    it = 0
    while res > tol:
        if it >= maxiter:
            raise ConvergenceError("conjugate gradients did not converge", res, it, x)
        Ap = apply(p)
        alpha = rz / seq_dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.sqrt(seq_dot(r, r)) / bnorm
        it += 1
        if res <= tol:
            break
        z = r if precond is None else precond(r)
        rz_new = seq_dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, res


def solve(system: LinearSystem, x0=None):
    """Jacobi-preconditioned CG; returns the full nodal field (or the vector for bare systems)."""
    A = system.matrix
    dinv = A.diagonal()
    if np.any(dinv <= 0):
        raise AssemblyError("matrix diagonal must be positive for Jacobi preconditioning")
    dinv = 1.0 / dinv
    x, it, res = pcg(lambda v: A @ v, system.rhs, lambda r: dinv * r, system.tol, system.maxiter, x0)
    system.info.update(iterations=it, residual=res)
    if system.grid is None:
        return x
    out = np.array(system.dirichlet_values, dtype=float)
    out[system.free] = x
    return out


def assemble_divBgrad_rhs(grid: Grid, B, w):
    """Weak-form vector of ``div(B grad w)`` including its natural boundary flux.

    Equals ``-K_B w`` where ``K_B`` is the matrix of :class:`BForm`.
    """
    return -BForm(grid, B).apply(w)


# ----------------------------------------------------------------------------
# Quadrature


def _volume_factor(grid, fac):
    if callable(fac):
        return grid.sample(fac)
    arr = np.asarray(fac, dtype=float)
    if arr.ndim == 0:
        return arr
    if arr.shape != grid.shape:
        raise GridMismatchError(f"volume integrand has shape {arr.shape}, grid expects {grid.shape}")
    return arr


def integrate_volume(grid: Grid, *factors) -> float:
    """Composite trapezoid integral over the box of the product of ``factors``."""
    prod = np.ones(grid.shape)
    for fac in factors:
        prod = prod * _volume_factor(grid, fac)
    return seq_dot(grid.volume_weights(), prod)


def _face_factor(grid, fac):
    M = grid.cells
    if callable(fac):
        return np.asarray(fac(grid.face_points()), dtype=float)
    arr = np.asarray(fac, dtype=float)
    if arr.ndim == 0:
        return arr
    if arr.shape == (M + 1, M + 1):
        return arr
    if arr.shape == grid.face_shape:
        full = np.zeros((M + 1, M + 1))
        full[1:M, 1:M] = arr
        return full
    if arr.shape == grid.shape:
        return arr[:, :, 0]
    raise GridMismatchError(f"Gamma0 integrand has shape {arr.shape}, not compatible with {grid}")


def integrate_gamma0(grid: Grid, *factors) -> float:
    """Composite trapezoid integral over the bottom face.

    Factors may be scalars, callables of points, full-face ``(M+1, M+1)``
    arrays, Gamma0 arrays ``(M-1, M-1)`` (extended by zero to the face edges)
    or nodal arrays (their ``k = 0`` trace).
    """
    prod = np.ones((grid.cells + 1,) * 2)
    for fac in factors:
        prod = prod * _face_factor(grid, fac)
    return seq_dot(grid.face_weights(), prod)


def weighted_h1_seminorm(grid: Grid, B, w, cell_mask=None) -> float:
    """Discrete ``int B grad w . grad w`` (the squared seminorm)."""
    return BForm(grid, B, cell_mask).value(w)


def l2_norm(grid: Grid, w) -> float:
    return float(np.sqrt(integrate_volume(grid, w, w)))
