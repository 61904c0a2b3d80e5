# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; see kernels.py for the pure-numpy twins."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def edge_stencil(const double[:, :, ::1] w,
                 const double[:, :, ::1] cx,
                 const double[:, :, ::1] cy,
                 const double[:, :, ::1] cz,
                 double[:, :, ::1] out):
    """out = sum over grid edges e of c_e (w_node - w_neighbour)."""
    cdef Py_ssize_t I = w.shape[0], J = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double acc, wc
    for i in range(I):
        for j in range(J):
            for k in range(K):
                wc = w[i, j, k]
                acc = 0.0
                if i > 0:
                    acc += cx[i - 1, j, k] * (wc - w[i - 1, j, k])
                if i < I - 1:
                    acc += cx[i, j, k] * (wc - w[i + 1, j, k])
                if j > 0:
                    acc += cy[i, j - 1, k] * (wc - w[i, j - 1, k])
                if j < J - 1:
                    acc += cy[i, j, k] * (wc - w[i, j + 1, k])
                if k > 0:
                    acc += cz[i, j, k - 1] * (wc - w[i, j, k - 1])
                if k < K - 1:
                    acc += cz[i, j, k] * (wc - w[i, j, k + 1])
                out[i, j, k] = acc


def tridiag_solve(const double[:, ::1] diag, const double[::1] off, double[:, ::1] rhs):
    """Solve symmetric tridiagonal systems row by row, in place on ``rhs``.

    Row p holds one system with diagonal ``diag[p]`` and the shared
    off-diagonal ``off``.
    """
    cdef Py_ssize_t P = rhs.shape[0], K = rhs.shape[1]
    cdef Py_ssize_t p, k
    cdef double denom
    cdef double[::1] cp = np.empty(K, dtype=np.float64)
    for p in range(P):
        denom = diag[p, 0]
        cp[0] = off[0] / denom if K > 1 else 0.0
        rhs[p, 0] = rhs[p, 0] / denom
        for k in range(1, K):
            denom = diag[p, k] - off[k - 1] * cp[k - 1]
            if k < K - 1:
                cp[k] = off[k] / denom
            rhs[p, k] = (rhs[p, k] - off[k - 1] * rhs[p, k - 1]) / denom
        for k in range(K - 2, -1, -1):
            rhs[p, k] -= cp[k] * rhs[p, k + 1]
    return np.asarray(rhs)


def dot(const double[::1] a, const double[::1] b):
    """Dot product with a strictly sequential reduction."""
    cdef Py_ssize_t i, N = a.shape[0]
    cdef double s = 0.0
    for i in range(N):
        s += a[i] * b[i]
    return s
