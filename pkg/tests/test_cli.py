import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doubleskin import cli
from doubleskin.cli import parse_config, run, serialize
from doubleskin.core_model import build_particle_layer
from doubleskin.errors import ConfigError
from doubleskin.verify import ConvergenceReport


def _summary(path):
    out = {}
    for line in (path / "summary.txt").read_text().splitlines():
        key, _, value = line.partition(": ")
        out[key] = value
    return out


def test_parse_default_lattice():
    cfg = parse_config("n=3\neps=0.125\nc0=0.5\n# comment\nfield.f = const:2  # trailing\n")
    assert build_particle_layer(cfg).count == 49
    assert float(cfg.f(np.zeros((1, 3)))[0]) == 2.0


@pytest.mark.parametrize(
    "text,line,match",
    [
        ("n=3\neps=0.3\n", 2, "1/eps"),
        ("field.a=const:-1\n", 1, "a must"),
        ("eps=0.125\nwidth=3\n", 2, "unknown key"),
        ("grid_nodes=abc\n", 1, "malformed"),
        ("n=3\neps 0.125\n", 2, "key = value"),
        ("field.f=poly:exp(x1)\n", 1, "polynomial"),
    ],
)
def test_errors_carry_line_numbers(text, line, match):
    with pytest.raises(ConfigError, match=match) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


finite = st.floats(min_value=0.1, max_value=10.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(a=finite, b=finite, eta=finite, bigN=finite, eps=st.sampled_from([0.125, 0.0625, 0.03125]))
def test_serialize_round_trip(a, b, eta, bigN, eps):
    text = (
        f"eps={eps!r}\neta={eta!r}\nbigN={bigN!r}\ngrid_nodes=64\n"
        f"field.a=const:{a!r}\nfield.f=poly:{b!r}*x1*x2 - x3**2\nfield.B=poly:1 + {b!r}*x1\n"
    )
    cfg = parse_config(text)
    assert parse_config(serialize(cfg)) == cfg


def test_serialize_round_trip_samples(tmp_path):
    x = np.linspace(0, 1, 5)
    np.save(tmp_path / "a.npy", 1 + np.add.outer(np.add.outer(x, x), x))
    cfg = parse_config("field.a = samples:a.npy\n", base_dir=tmp_path)
    assert parse_config(serialize(cfg), base_dir=tmp_path) == cfg


def test_optimize_limit_zero_data(tmp_path):
    code = run(["optimize-limit", "--out", str(tmp_path), "--set", "field.f=const:0", "--set", "grid_nodes=16"])
    assert code == 0
    assert float(_summary(tmp_path)["J0"]) == 0.0
    assert (tmp_path / "v0.csv").read_text().startswith("i,j,k,value\n")


def test_solve_eps_margin_error(tmp_path, capsys):
    code = run(["solve-eps", "--out", str(tmp_path), "--set", "eps=0.25", "--set", "c0=1"])
    assert code == 1
    assert "eps/8" in capsys.readouterr().err


def test_config_file_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 3\neps = 0.3\n")
    assert run(["solve-limit", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert run(["solve-limit", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    assert run(["solve-limit", "--out", str(tmp_path), "--set", "nonsense"]) == 1


def test_converge_trend_violation_exit_code(tmp_path, monkeypatch):
    rows = [
        {c: 0.0 for c in cli.convergence_study.__globals__["COLUMNS"]} | {"eps": e, "grid": 32, "rel_cost_gap": g}
        for e, g in ((0.25, 0.1), (0.125, 0.2))
    ]
    monkeypatch.setattr(cli, "convergence_study", lambda *a, **k: ConvergenceReport(rows=rows))
    assert run(["converge", "--out", str(tmp_path)]) == 3
    assert _summary(tmp_path)["trend_violations"] == "rel_cost_gap"


def test_converge_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "convergence_study", lambda *a, **k: ConvergenceReport(failure="eps=0.125: stalled"))
    assert run(["converge", "--out", str(tmp_path)]) == 2


def test_small_converge_is_deterministic(tmp_path):
    argv = ["converge", "--set", "eps_list=0.125,0.0625", "--seed", "3"]
    assert run(argv + ["--out", str(tmp_path / "a")]) == 0
    assert run(argv + ["--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "convergence.csv").read_bytes()
    assert first == (tmp_path / "b" / "convergence.csv").read_bytes()
    lines = first.decode().splitlines()
    assert lines[0].split(",")[-1] == "seconds" and len(lines) == 3


@pytest.mark.parametrize("sub,files", [
    ("solve-limit", ["u0.csv", "P0.csv"]),
    ("solve-eps", ["u_eps.csv", "monopoles.csv"]),
    ("optimize-eps", ["v_eps.csv", "u_eps.csv", "P_eps.csv"]),
    ("verify-cell", ["cell.csv", "lemma.csv"]),
    ("verify-gradient", ["gradient.csv"]),
    ("energy-study", ["energy.csv"]),
])
def test_subcommands_write_outputs(tmp_path, sub, files):
    argv = [sub, "--out", str(tmp_path), "--set", "eps=0.25", "--set", "c0=0.25", "--set", "grid_nodes=16",
            "--set", "eps_list=0.25"]
    assert run(argv) == 0
    for name in files + ["summary.txt"]:
        assert (tmp_path / name).exists()
