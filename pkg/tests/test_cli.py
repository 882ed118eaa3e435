import csv
import json

import pytest

from fracocp import cli
from fracocp.optimality import SolverError


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "selftest passed" in out and "FAIL" not in out


def test_selftest_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "selftest_checks", lambda quick=True: [("x", False, "bad")])
    assert cli.main(["selftest"]) == cli.EXIT_SELFTEST
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("args", [["run", "--set", "colour=1"], ["run", "--set", "alpha=3"],
                                  ["run", "--set", "alpha"], ["run", "missing.toml"],
                                  ["sweep", "--param", "gamma", "--values", ","]])
def test_config_errors(tmp_path, args, capsys):
    assert cli.main(args + ["-o", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_solver_failure(monkeypatch, tmp_path, capsys):
    def boom(cfg, log=None):
        raise SolverError("no convergence", 5, 1.0)

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", "-o", str(tmp_path)]) == cli.EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text("example = 2\nalpha = 0.5\nmax_iters = 2\n")
    out = tmp_path / "out"
    assert cli.main(["--deterministic", "run", str(cfg), "-q", "-o", str(out)]) == cli.EXIT_OK
    for name in ("history.csv", "mesh.json", "solution.json", "summary.json"):
        assert (out / name).exists()
    assert "final dofs" in capsys.readouterr().out


def test_sweep(tmp_path):
    rc = cli.main(["sweep", "--param", "gamma", "--values", "1,0.1", "-q", "-o", str(tmp_path),
                   "--set", "example=2", "--set", "max_iters=1"])
    assert rc == cli.EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["value"]) for r in rows] == [1.0, 0.1]
    assert float(rows[1]["zero_fraction"]) >= float(rows[0]["zero_fraction"])
    assert (tmp_path / "gamma_0.1" / "history.csv").exists()


def test_mesh_export(tmp_path):
    path = tmp_path / "m.json"
    assert cli.main(["mesh-export", "--set", "example=2", "--refine", "2", "--out", str(path)]) == 0
    d = json.loads(path.read_text())
    assert len(d["elements"]) == 128
