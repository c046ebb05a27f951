"""End-to-end runs of the command-line interface."""
import json

import numpy as np
import pytest

from conftest import GOLDEN, MODELS
from depwire.cli import main

SIR = str(MODELS / "sir.stockflow")
FIB_W = str(MODELS / "fib.wiring")


def run_cli(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def test_check_valid_files(capsys):
    assert run_cli("check", SIR, MODELS / "fib_add.mealy") == 0
    out = capsys.readouterr().out
    assert f"{SIR}: ok" in out and "fib_add.mealy: ok" in out


def test_check_reports_wiring_cycle(capsys):
    assert run_cli("check", MODELS / "loop.wiring") == 1
    out = capsys.readouterr().out
    assert "[cycle]" in out and "cycle of length 4" in out


def test_check_missing_file(capsys):
    assert run_cli("check", "no/such.stockflow") == 2
    assert "error:" in capsys.readouterr().err


def test_check_json_schema(capsys):
    assert run_cli("check", "--format", "json", SIR) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == {"results": [{"path": SIR, "ok": True, "findings": []}]}


def test_check_flags_variable_cycle(tmp_path, capsys):
    bad = tmp_path / "bad.stockflow"
    bad.write_text((MODELS / "sir.stockflow").read_text()
                   + "extra_links:\n- [var, f, p]\n")
    assert run_cli("check", bad) == 1
    out = capsys.readouterr().out
    assert "[2]" in out and "variable cycle" in out


def test_check_json_lists_findings(tmp_path, capsys):
    bad = tmp_path / "bad.stockflow"
    bad.write_text((MODELS / "sir.stockflow").read_text()
                   + "extra_links:\n- [var, f, p]\n")
    assert run_cli("check", "--format", "json", bad) == 1
    doc = json.loads(capsys.readouterr().out)
    (res,) = doc["results"]
    assert not res["ok"]
    assert [f["condition"] for f in res["findings"]] == ["2"]


# ---------------------------------------------------------------------------
# deps
# ---------------------------------------------------------------------------

def test_deps_pushforward(capsys):
    assert run_cli("deps", MODELS / "fig2.wiring") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["y1 -> z1", "y1 -> z3", "y2 -> z3"]


def test_deps_oracle_cross_check(capsys):
    assert run_cli("deps", MODELS / "fig2.wiring", "--oracle") == 0
    assert "oracle agrees (3 pair(s))" in capsys.readouterr().out


def test_deps_with_explicit_dependency_file(capsys):
    assert run_cli("deps", MODELS / "fig2.wiring",
                   MODELS / "fig2.dependency") == 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_deps_empty_dependency_pushes_to_nothing(tmp_path, capsys):
    dep = tmp_path / "none.dependency"
    dep.write_text("format_version: '1'\nkind: dependency\n"
                   "inputs: [x1, x2]\noutputs: [xo1, xo2]\ndependency: []\n")
    assert run_cli("deps", MODELS / "fig2.wiring", dep) == 0
    assert capsys.readouterr().out == ""


def test_deps_json(capsys):
    assert run_cli("deps", "--format", "json", MODELS / "fig2.wiring",
                   "--oracle") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pairs"] == [["y1", "z1"], ["y1", "z3"], ["y2", "z3"]]
    assert doc["oracle_agrees"] is True


def test_deps_endpoint_mismatch(tmp_path, capsys):
    dep = tmp_path / "wrong.dependency"
    dep.write_text("format_version: '1'\nkind: dependency\n"
                   "inputs: [q]\noutputs: [r]\ndependency: []\n")
    assert run_cli("deps", MODELS / "fig2.wiring", dep) == 2
    assert "do not match" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# compose / to-mealy
# ---------------------------------------------------------------------------

def test_compose_machines_writes_golden(tmp_path):
    out = tmp_path / "fib.mealy"
    assert run_cli("compose", FIB_W, MODELS / "fib_add.mealy",
                   MODELS / "fib_delay.mealy", "-o", out) == 0
    assert out.read_text() == (GOLDEN / "fib_composite.mealy").read_text()


def test_compose_identity_reproduces_the_model(tmp_path):
    from depwire import modelio as mio
    from depwire.wiring import identity_ddwd

    ident = tmp_path / "id.wiring"
    ident.write_text(mio.dumps(identity_ddwd(mio.load(SIR).iface)))
    out = tmp_path / "same.stockflow"
    assert run_cli("compose", ident, SIR, "-o", out) == 0
    assert out.read_text() == (MODELS / "sir.stockflow").read_text()


def test_compose_stockflows(tmp_path):
    out = tmp_path / "combo.stockflow"
    assert run_cli("compose", MODELS / "coflow.wiring",
                   MODELS / "water.stockflow", MODELS / "pollutant.stockflow",
                   "-o", out) == 0
    assert run_cli("check", out) == 0


def test_compose_rejects_mixture(tmp_path, capsys):
    out = tmp_path / "x"
    assert run_cli("compose", FIB_W, MODELS / "fib_add.mealy", SIR,
                   "-o", out) == 2
    assert "cannot mix" in capsys.readouterr().err


def test_to_mealy_writes_golden(tmp_path):
    out = tmp_path / "sir.mealy"
    assert run_cli("to-mealy", SIR, "-o", out) == 0
    assert out.read_text() == (GOLDEN / "sir.mealy").read_text()


def test_to_mealy_refuses_invalid_diagram(tmp_path, capsys):
    bad = tmp_path / "bad.stockflow"
    bad.write_text((MODELS / "sir.stockflow").read_text()
                   + "extra_links:\n- [var, f, p]\n")
    out = tmp_path / "x.mealy"
    assert run_cli("to-mealy", bad, "-o", out) == 1
    assert "variable cycle" in capsys.readouterr().out


def test_to_mealy_of_empty_diagram(tmp_path):
    src = tmp_path / "zero.stockflow"
    src.write_text("format_version: '1'\nkind: stockflow\n")
    out = tmp_path / "zero.mealy"
    assert run_cli("to-mealy", src, "-o", out) == 0
    from depwire import modelio as mio

    m = mio.load(str(out))
    assert m.states.size == 0 and m.iface.outputs.size == 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_scenario(tmp_path):
    out = tmp_path / "run.csv"
    assert run_cli("simulate", MODELS / "sir.scenario", "--t1", "1",
                   "-o", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,S,I,R,out1"
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.all(np.abs(data[:, 1:4].sum(axis=1) - 1000.0) < 1e-9)
    assert data[-1, 0] == 1.0


def test_simulate_rejects_bad_step(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert run_cli("simulate", MODELS / "sir.scenario", "--dt", "-1",
                   "-o", out) == 2
    assert "error:" in capsys.readouterr().err


def test_simulate_integration_failure_is_a_finding(tmp_path, capsys):
    sc = tmp_path / "zero.scenario"
    sc.write_text(
        f"format_version: '1'\nkind: scenario\nmodel: {SIR}\n"
        "state: {S: 0, I: 0, R: 0}\n"
        "signal:\n  constant: {c: 2, beta: 0.5, tau: 0.1, omega: 0.05}\n"
        "t1: 1.0\ndt: 0.1\n"
    )
    assert run_cli("simulate", sc, "-o", tmp_path / "x.csv") == 1
    assert "integration failed at step 0" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# run-discrete
# ---------------------------------------------------------------------------

@pytest.fixture()
def fib_machine(tmp_path):
    path = tmp_path / "fib.mealy"
    path.write_text((GOLDEN / "fib_composite.mealy").read_text())
    return path


def test_run_discrete_fibonacci(tmp_path, fib_machine):
    table = tmp_path / "in.csv"
    table.write_text("step\n" + "".join(f"{k}\n" for k in range(10)))
    out = tmp_path / "out.csv"
    assert run_cli("run-discrete", fib_machine, table,
                   "--state", "right.y=1", "-o", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,left.x,right.y,fib"
    xs = [float(ln.split(",")[1]) for ln in lines[1:]]
    assert xs == [1, 1, 2, 3, 5, 8, 13, 21, 34, 55]


def test_run_discrete_bad_state(tmp_path, fib_machine, capsys):
    table = tmp_path / "in.csv"
    table.write_text("step\n0\n")
    assert run_cli("run-discrete", fib_machine, table,
                   "--state", "bogus=1", "-o", tmp_path / "o.csv") == 2
    assert "unknown state" in capsys.readouterr().err


def test_run_discrete_header_mismatch(tmp_path, fib_machine, capsys):
    table = tmp_path / "in.csv"
    table.write_text("tick\n0\n")
    assert run_cli("run-discrete", fib_machine, table,
                   "-o", tmp_path / "o.csv") == 2
    assert "header" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# export-dot
# ---------------------------------------------------------------------------

def test_export_dot_wiring(tmp_path):
    out = tmp_path / "fig2.dot"
    assert run_cli("export-dot", MODELS / "fig2.wiring", "-o", out) == 0
    assert out.read_text().count("style=dashed") == 5


def test_export_dot_rejects_scenarios(tmp_path, capsys):
    assert run_cli("export-dot", MODELS / "sir.scenario",
                   "-o", tmp_path / "x.dot") == 2
    assert "cannot render" in capsys.readouterr().err


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a.mealy", tmp_path / "b.mealy"
    run_cli("to-mealy", SIR, "-o", a)
    run_cli("to-mealy", SIR, "-o", b)
    assert a.read_bytes() == b.read_bytes()
