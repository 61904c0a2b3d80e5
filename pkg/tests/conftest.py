import numpy as np
import pytest

from doubleskin import kernels

PY_KERNELS = {
    "edge_stencil": kernels._edge_stencil_py,
    "tridiag_solve": kernels._tridiag_solve_py,
    "dot": kernels._dot_py,
}


@pytest.fixture(params=["default", "python"])
def backend(request, monkeypatch):
    """Run a test on the selected kernels and again on the numpy fallback."""
    if request.param == "python":
        for name, fn in PY_KERNELS.items():
            monkeypatch.setattr(kernels, name, fn)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
