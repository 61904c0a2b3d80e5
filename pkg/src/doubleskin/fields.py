"""Coefficient carriers for a(x), f(x), u_T(x) and the metric matrix B(x).

A field is described by a short rule string so that configurations stay
plain text:

``const:<v>``
    constant value (for matrix fields ``v`` is a scalar multiple of the
    identity or a JSON nested list)
``poly:<expr>``
    polynomial in ``x1 .. xn`` built from numbers, ``+ - * /`` and integer
    powers; for matrix fields the polynomial multiplies the identity
``samples:<path>``
    nodal samples in a ``.npy`` file on a uniform tensor grid over the closed
    unit box, evaluated by multilinear interpolation; scalar fields store an
    array of shape ``(s1, ..., sn)``, matrix fields ``(s1, ..., sn, n, n)``
"""

from __future__ import annotations

import ast
import json
import os

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _check_poly(node, names):
    if isinstance(node, ast.Expression):
        return _check_poly(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ConfigError(f"unsupported literal {node.value!r} in polynomial")
        return True
    if isinstance(node, ast.Name):
        if node.id not in names:
            raise ConfigError(f"unknown variable {node.id!r}; expected one of {sorted(names)}")
        return False
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check_poly(node.operand, names)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        left_const = _check_poly(node.left, names)
        right_const = _check_poly(node.right, names)
        if isinstance(node.op, ast.Pow):
            exp = node.right
            if isinstance(exp, ast.UnaryOp):
                raise ConfigError("exponents must be non-negative integers")
            if not (isinstance(exp, ast.Constant) and isinstance(exp.value, int) and exp.value >= 0):
                raise ConfigError("exponents must be non-negative integer literals")
        if isinstance(node.op, ast.Div) and not right_const:
            raise ConfigError("division is only allowed by constants")
        return left_const and right_const
    raise ConfigError(f"unsupported syntax in polynomial: {ast.dump(node)}")


def _compile_poly(expr, n):
    names = {f"x{i + 1}" for i in range(n)}
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"malformed polynomial {expr!r}: {exc.msg}") from None
    _check_poly(tree, names)
    code = compile(tree, "<poly>", "eval")

    def evaluate(points):
        env = {f"x{i + 1}": points[..., i] for i in range(n)}
        out = eval(code, {"__builtins__": {}}, env)  # validated AST above
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1]).copy()

    return evaluate


def _load_samples(path, base_dir):
    full = path if base_dir is None or os.path.isabs(path) else os.path.join(base_dir, path)
    try:
        data = np.load(full)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read samples file {full!r}: {exc}") from None
    return np.asarray(data, dtype=float)


def _interpolator(values, n):
    axes = tuple(np.linspace(0.0, 1.0, s) for s in values.shape[:n])
    if min(values.shape[:n]) < 2:
        raise ConfigError("sample grids need at least two nodes per axis")
    return RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)


def _as_points(points, n):
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}, got shape {pts.shape}")
    return pts


class CoefficientField:
    """Scalar field on the closed unit box."""

    def __init__(self, spec: str, n: int = 3, base_dir: str | None = None):
        self.spec = spec.strip()
        self.n = n
        kind, sep, body = self.spec.partition(":")
        if not sep:
            raise ConfigError(f"field value {spec!r} must look like 'const:..', 'poly:..' or 'samples:..'")
        self.kind = kind.strip()
        body = body.strip()
        if self.kind == "const":
            try:
                self.value = float(body)
            except ValueError:
                raise ConfigError(f"malformed constant {body!r}") from None
            if not np.isfinite(self.value):
                raise ConfigError("constant fields must be finite")
        elif self.kind == "poly":
            self._poly = _compile_poly(body, n)
        elif self.kind == "samples":
            data = _load_samples(body, base_dir)
            if data.ndim != n:
                raise ConfigError(f"scalar samples must be {n}-dimensional, got shape {data.shape}")
            self._interp = _interpolator(data, n)
        else:
            raise ConfigError(f"unknown field rule {self.kind!r}")

    @classmethod
    def constant(cls, value: float, n: int = 3) -> "CoefficientField":
        return cls(f"const:{float(value)!r}", n)

    @property
    def is_constant(self) -> bool:
        return self.kind == "const"

    def __call__(self, points) -> np.ndarray:
        pts = _as_points(points, self.n)
        if self.kind == "const":
            return np.full(pts.shape[:-1], self.value)
        if self.kind == "poly":
            return self._poly(pts)
        flat = pts.reshape(-1, self.n)
        return self._interp(flat).reshape(pts.shape[:-1])

    def laplacian(self, points, step: float = 1e-3) -> np.ndarray:
        """Second-order central-difference Laplacian of the field."""
        pts = _as_points(points, self.n)
        if self.kind == "const":
            return np.zeros(pts.shape[:-1])
        centre = self(pts)
        out = -2.0 * self.n * centre
        for d in range(self.n):
            shift = np.zeros(self.n)
            shift[d] = step
            out += self(pts + shift) + self(pts - shift)
        return out / step**2

    def __eq__(self, other):
        return isinstance(other, CoefficientField) and (self.spec, self.n) == (other.spec, other.n)

    def __hash__(self):
        return hash((self.spec, self.n))

    def __repr__(self):
        return f"CoefficientField({self.spec!r})"


class MatrixField:
    """Symmetric matrix field B(x) on the closed unit box."""

    def __init__(self, spec: str, n: int = 3, base_dir: str | None = None):
        self.spec = spec.strip()
        self.n = n
        kind, sep, body = self.spec.partition(":")
        if not sep:
            raise ConfigError(f"matrix field value {spec!r} must look like 'const:..', 'poly:..' or 'samples:..'")
        self.kind = kind.strip()
        body = body.strip()
        if self.kind == "const":
            try:
                raw = json.loads(body)
            except json.JSONDecodeError:
                raise ConfigError(f"malformed constant matrix {body!r}") from None
            mat = np.asarray(raw, dtype=float)
            if mat.ndim == 0:
                mat = float(mat) * np.eye(n)
            if mat.shape != (n, n) or not np.all(np.isfinite(mat)):
                raise ConfigError(f"constant matrix must be a finite scalar or {n}x{n} list")
            self.value = mat
        elif self.kind == "poly":
            self._poly = _compile_poly(body, n)
        elif self.kind == "samples":
            data = _load_samples(body, base_dir)
            if data.shape[n:] != (n, n):
                raise ConfigError(f"matrix samples must have shape (s1..s{n}, {n}, {n}), got {data.shape}")
            self._interp = _interpolator(data, n)
        else:
            raise ConfigError(f"unknown field rule {self.kind!r}")

    @classmethod
    def identity(cls, n: int = 3, scale: float = 1.0) -> "MatrixField":
        return cls(f"const:{float(scale)!r}", n)

    @property
    def is_constant(self) -> bool:
        return self.kind == "const"

    @property
    def is_isotropic(self) -> bool:
        """True when B is a scalar multiple of the identity everywhere."""
        if self.kind == "poly":
            return True
        if self.kind == "const":
            return np.array_equal(self.value, self.value[0, 0] * np.eye(self.n))
        return False

    def __call__(self, points) -> np.ndarray:
        pts = _as_points(points, self.n)
        shape = pts.shape[:-1]
        if self.kind == "const":
            return np.broadcast_to(self.value, shape + (self.n, self.n)).copy()
        if self.kind == "poly":
            return self._poly(pts)[..., None, None] * np.eye(self.n)
        flat = pts.reshape(-1, self.n)
        return self._interp(flat).reshape(shape + (self.n, self.n))

    def trace(self, points) -> np.ndarray:
        return np.trace(self(points), axis1=-2, axis2=-1)

    def __eq__(self, other):
        return isinstance(other, MatrixField) and (self.spec, self.n) == (other.spec, other.n)

    def __hash__(self):
        return hash((self.spec, self.n))

    def __repr__(self):
        return f"MatrixField({self.spec!r})"


def check_symmetric(mats: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(float(np.max(np.abs(mats))), 1.0) if mats.size else 1.0
    return bool(np.all(np.abs(mats - np.swapaxes(mats, -1, -2)) <= rtol * scale))
