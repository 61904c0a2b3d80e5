"""Command-line driver: ``doubleskin <subcommand> --config FILE --out DIR``.

Config files hold one ``key = value`` per line with ``#`` comments.  Exit
codes: 0 success, 1 configuration error, 2 solver non-convergence, 3 trend
violation in ``converge``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .core_model import ProblemConfig, build_particle_layer, constants, effective_robin
from .errors import ConfigError, ConvergenceError, DoubleSkinError
from .fields import CoefficientField, MatrixField
from .limit_solver import LimitSolver
from .perforated_solver import EpsProblem
from .verify import common_grid, convergence_study, gradient_check, lemma21_check, radial_robin_oracle

SUBCOMMANDS = (
    "solve-limit",
    "solve-eps",
    "optimize-limit",
    "optimize-eps",
    "energy-study",
    "converge",
    "verify-cell",
    "verify-gradient",
)

_NUMERIC = {
    "n": ("n", int),
    "eps": ("eps", float),
    "c0": ("C0", float),
    "eta": ("eta", float),
    "bigN": ("bigN", float),
    "grid_nodes": ("grid_nodes", int),
    "tol_linear": ("tol_linear", float),
    "tol_opt": ("tol_opt", float),
    "max_iter": ("max_iter", int),
}
_FIELDS = {"field.a": "a", "field.f": "f", "field.uT": "uT", "field.B": "B"}
KNOWN_KEYS = tuple(_NUMERIC) + tuple(_FIELDS) + ("eps_list",)

DEFAULT_EPS_LIST = (1 / 8, 1 / 16, 1 / 32)


def _fmt(x) -> str:
    return "%.17g" % x


# ----------------------------------------------------------------------------
# Config text


def parse_settings(text: str) -> dict:
    """Split config text into ``{key: (value, line)}``; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno)
        out[key] = (value, lineno)
    return out


def _blame(message, settings):
    """Line of the key most likely responsible for an invariant violation."""
    msg = message.lower()
    for key, words in (
        ("c0", ("c0",)),
        ("eps", ("eps",)),
        ("grid_nodes", ("grid_nodes",)),
        ("field.a", ("a must",)),
        ("field.B", ("b must",)),
        ("field.f", ("field f",)),
        ("field.uT", ("field ut",)),
    ):
        if any(w in msg for w in words) and key in settings:
            return settings[key][1]
    return None


def config_from_settings(settings: dict, base_dir=None) -> ProblemConfig:
    kwargs = {}
    for key, (name, kind) in _NUMERIC.items():
        if key not in settings:
            continue
        value, line = settings[key]
        try:
            number = float(value)
            if kind is int:
                if number != int(number):
                    raise ValueError
                number = int(number)
        except ValueError:
            raise ConfigError(f"malformed value {value!r} for {key}", line) from None
        kwargs[name] = number
    n = kwargs.get("n", 3)
    for key, name in _FIELDS.items():
        if key not in settings:
            continue
        value, line = settings[key]
        cls = MatrixField if name == "B" else CoefficientField
        try:
            kwargs[name] = cls(value, n, base_dir)
        except ConfigError as exc:
            raise ConfigError(str(exc), line) from None
    for name, default in (("f", 1.0), ("a", 1.0), ("uT", 0.0)):
        kwargs.setdefault(name, CoefficientField.constant(default, n))
    kwargs.setdefault("B", MatrixField.identity(n))
    try:
        return ProblemConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(str(exc), _blame(str(exc), settings)) from None


def parse_config(text: str, base_dir=None) -> ProblemConfig:
    """Parse and validate a config file's text."""
    return config_from_settings(parse_settings(text), base_dir)


def eps_list_from_settings(settings: dict):
    if "eps_list" not in settings:
        return DEFAULT_EPS_LIST
    value, line = settings["eps_list"]
    try:
        eps = tuple(float(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"malformed eps_list {value!r}", line) from None
    if not eps:
        raise ConfigError("eps_list is empty", line)
    return eps


def serialize(cfg: ProblemConfig) -> str:
    lines = [
        f"n = {cfg.n}",
        f"eps = {cfg.eps!r}",
        f"c0 = {cfg.C0!r}",
        f"eta = {cfg.eta!r}",
        f"bigN = {cfg.bigN!r}",
        f"grid_nodes = {cfg.grid_nodes}",
        f"tol_linear = {cfg.tol_linear!r}",
        f"tol_opt = {cfg.tol_opt!r}",
        f"max_iter = {cfg.max_iter}",
        f"field.a = {cfg.a.spec}",
        f"field.f = {cfg.f.spec}",
        f"field.uT = {cfg.uT.spec}",
        f"field.B = {cfg.B.spec}",
    ]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# Output


class Output:
    def __init__(self, directory):
        self.dir = directory
        os.makedirs(directory, exist_ok=True)
        self.summary = []

    def write(self, name, text):
        with open(os.path.join(self.dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def table(self, name, header, rows):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _fmt(v))
                                  for v in row))
        self.write(name, "\n".join(lines) + "\n")

    def field(self, name, arr):
        idx = np.indices(arr.shape).reshape(arr.ndim, -1).T
        lines = ["i,j,k,value"]
        lines += [f"{i},{j},{k},{_fmt(x)}" for (i, j, k), x in zip(idx, arr.ravel())]
        self.write(name, "\n".join(lines) + "\n")

    def boundary(self, name, v):
        """Gamma0 control as ``i,j,k,value`` with nodal indices (k = 0)."""
        rows = ["i,j,k,value"]
        for (i, j), x in np.ndenumerate(v):
            rows.append(f"{i + 1},{j + 1},0,{_fmt(x)}")
        self.write(name, "\n".join(rows) + "\n")

    def note(self, key, value):
        self.summary.append(f"{key}: {value if isinstance(value, str) else _fmt(value)}")

    def close(self):
        self.write("summary.txt", "\n".join(self.summary) + "\n")


# ----------------------------------------------------------------------------
# Subcommands


def _solve_limit(cfg, out, args):
    s = LimitSolver(cfg)
    v = np.zeros(s.grid.face_shape)
    u = s.state(v)
    P = s.adjoint(u)
    out.field("u0.csv", u)
    out.field("P0.csv", P)
    out.note("J0(v=0)", s.cost(v, u))


def _solve_eps(cfg, out, args):
    p = EpsProblem(cfg)
    v = np.zeros(p.grid.face_shape)
    st = p.state(v)
    out.field("u_eps.csv", st.u)
    c = p.layer.centers
    out.table(
        "monopoles.csv",
        ("j", "x1", "x2", "x3", "q", "U"),
        [(j, *c[j], st.q[j], st.monopoles.U[j]) for j in range(p.layer.count)],
    )
    out.note("particles", str(p.layer.count))
    out.note("closure_iterations", str(st.monopoles.iterations))
    out.note("J_eps(v=0)", p.cost(v, st))


def _optimize_limit(cfg, out, args):
    sol = LimitSolver(cfg).optimize()
    out.boundary("v0.csv", sol.v0)
    out.field("u0.csv", sol.u0)
    out.field("P0.csv", sol.P0)
    out.note("J0", sol.J0_value)
    out.note("iterations", str(sol.iterations))
    out.note("opt_residual", sol.opt_residual)


def _optimize_eps(cfg, out, args):
    sol = EpsProblem(cfg).optimize()
    out.boundary("v_eps.csv", sol.v_eps)
    out.field("u_eps.csv", sol.u_eps)
    out.field("P_eps.csv", sol.P_eps)
    out.note("J_eps", sol.J_eps)
    out.note("energy_eps", sol.energy_eps)
    out.note("iterations", str(sol.iterations))
    out.note("opt_residual", sol.opt_residual)


def _energy_study(cfg, out, args):
    eps_list = sorted(args.eps_list, reverse=True)
    M = common_grid(cfg, eps_list)
    base = dataclasses.replace(cfg, grid_nodes=M)
    limit = LimitSolver(base)
    u0, P0, energy_limit = limit.uncontrolled()
    identity = float(np.sum(limit.load * P0))
    rows = []
    for eps in eps_list:
        e = EpsProblem(dataclasses.replace(base, eps=eps)).energy()
        gap = abs(e - energy_limit) / energy_limit if energy_limit else abs(e)
        rows.append((eps, M, e, energy_limit, gap))
    out.table("energy.csv", ("eps", "grid", "energy_eps", "energy_limit", "rel_energy_gap"), rows)
    out.note("energy_limit", energy_limit)
    out.note("int_f_P0", identity)


def _converge(cfg, out, args):
    report = convergence_study(cfg, args.eps_list, timing=args.timing)
    out.write("convergence.csv", report.to_csv())
    for eps, secs in zip(report.column("eps"), report.wall_seconds):
        out.note(f"wall_seconds(eps={eps:g})", secs)
    if report.failure:
        out.note("failure", report.failure)
        raise ConvergenceError(report.failure)
    bad = report.violations()
    out.note("trend_violations", ",".join(bad) if bad else "none")
    return 3 if bad else 0


def _verify_cell(cfg, out, args):
    c = constants(cfg.n, cfg.C0)
    a_val = float(cfg.a(np.full((1, cfg.n), 0.5))[0])
    target = effective_robin(a_val, c)
    rows = []
    for eps in (1e-2, 1e-3, 1e-4):
        val = radial_robin_oracle(cfg.n, cfg.C0, eps, a_val)
        rows.append((eps, val, target, abs(val - target) / target))
    out.table("cell.csv", ("eps", "oracle", "effective_robin", "rel_gap"), rows)
    lemma = lemma21_check(cfg.B, n=cfg.n, C0=cfg.C0)
    out.table("lemma.csv", ("eps", "lhs", "rhs", "rel_gap"), [(r.eps, r.lhs, r.rhs, r.gap) for r in lemma])
    out.note("effective_robin", target)


def _verify_gradient(cfg, out, args):
    rows = [
        ("limit", gradient_check("limit", cfg, seed=args.seed)),
        ("eps", gradient_check("eps", cfg, seed=args.seed)),
    ]
    out.table("gradient.csv", ("solver", "max_rel_error"), rows)
    for name, err in rows:
        out.note(f"gradient_error_{name}", err)


_HANDLERS = {
    "solve-limit": _solve_limit,
    "solve-eps": _solve_eps,
    "optimize-limit": _optimize_limit,
    "optimize-eps": _optimize_eps,
    "energy-study": _energy_study,
    "converge": _converge,
    "verify-cell": _verify_cell,
    "verify-gradient": _verify_gradient,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="doubleskin", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="problem config file (defaults apply when omitted)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    ap.add_argument("--timing", action="store_true", help="record wall times in convergence.csv")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text, base_dir = "", None
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            base_dir = os.path.dirname(os.path.abspath(args.config))
        settings = parse_settings(text)
        for item in args.set:
            over = parse_settings(item)
            if not over:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            settings.update({k: (v, None) for k, (v, _) in over.items()})
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = config_from_settings(settings, base_dir)
        args.eps_list = eps_list_from_settings(settings)
        out = Output(args.out)
        out.note("subcommand", args.subcommand)
        try:
            code = _HANDLERS[args.subcommand](cfg, out, args) or 0
        finally:
            out.close()
        return code
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DoubleSkinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
