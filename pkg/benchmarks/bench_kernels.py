"""Time the compiled kernels against their numpy twins.

Usage: ``python benchmarks/bench_kernels.py [cells]`` (default 128).
"""

import sys
import timeit

import numpy as np

from doubleskin import kernels


def case(cells):
    rng = np.random.default_rng(0)
    n = cells + 1
    w = rng.standard_normal((n, n, n))
    cx = rng.random((n - 1, n, n))
    cy = rng.random((n, n - 1, n))
    cz = rng.random((n, n, n - 1))
    out = np.empty_like(w)
    P = (cells - 1) ** 2
    diag = 4.0 + rng.random((P, cells))
    off = -np.ones(cells - 1)
    rhs = rng.standard_normal((P, cells))
    vec = rng.standard_normal(n**3)
    return {
        "edge_stencil": lambda f: f(w, cx, cy, cz, out),
        "tridiag_solve": lambda f: f(diag, off, rhs.copy()),
        "dot": lambda f: f(vec, vec),
    }


def main():
    cells = int(sys.argv[1]) if len(sys.argv) > 1 else 128
    backends = {"python": kernels}
    if kernels.BACKEND == "compiled":
        from doubleskin import _kernels

        backends["compiled"] = _kernels
    print(f"grid {cells}^3 cells; compiled backend available: {kernels.BACKEND == 'compiled'}")
    print(f"{'kernel':<15}" + "".join(f"{b:>12}" for b in backends) + "   (seconds per call)")
    for name, call in case(cells).items():
        cols = []
        for label, mod in backends.items():
            fn = getattr(mod, name if label == "compiled" else f"_{name}_py")
            cols.append(min(timeit.repeat(lambda: call(fn), number=1, repeat=3)))
        print(f"{name:<15}" + "".join(f"{t:>12.4f}" for t in cols))


if __name__ == "__main__":
    main()
