import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doubleskin import kernels

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")


def _stencil_inputs(seed, I, J, K):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((I, J, K))
    return w, rng.random((I - 1, J, K)), rng.random((I, J - 1, K)), rng.random((I, J, K - 1))


@compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(2, 7), st.integers(2, 7))
def test_edge_stencil_backends_agree(seed, I, J, K):
    from doubleskin import _kernels

    args = _stencil_inputs(seed, I, J, K)
    out_c = np.empty((I, J, K))
    out_p = np.empty((I, J, K))
    _kernels.edge_stencil(*args, out_c)
    kernels._edge_stencil_py(*args, out_p)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-13, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 9))
def test_tridiag_solve_matches_dense(seed, P, K):
    rng = np.random.default_rng(seed)
    diag = 3.0 + rng.random((P, K))
    off = -rng.random(K - 1)
    rhs = rng.standard_normal((P, K))
    expected = np.stack(
        [np.linalg.solve(np.diag(diag[p]) + np.diag(off, 1) + np.diag(off, -1), rhs[p]) for p in range(P)]
    )
    got_py = kernels._tridiag_solve_py(diag, off, rhs.copy())
    np.testing.assert_allclose(got_py, expected, rtol=1e-12, atol=1e-12)
    got = kernels.tridiag_solve(diag, off, rhs.copy())
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_stencil_constant_field_gives_zero(backend):
    w, cx, cy, cz = _stencil_inputs(0, 5, 4, 6)
    out = np.empty_like(w)
    kernels.edge_stencil(np.full_like(w, 2.5), cx, cy, cz, out)
    assert np.max(np.abs(out)) < 1e-14


def test_dot_is_sequential_and_exact_for_integers(backend):
    a = np.arange(1000, dtype=float)
    assert kernels.dot(a, a) == float(sum(i * i for i in range(1000)))


def test_threads_reads_env(monkeypatch):
    monkeypatch.setenv("DSF_THREADS", "3")
    assert kernels.threads() == 3
    monkeypatch.setenv("DSF_THREADS", "junk")
    assert kernels.threads() == 1
