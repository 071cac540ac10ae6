import json
import subprocess
import sys

import numpy as np
import pytest

from thinhomog.cli import dump_config, load_config, main
from thinhomog.experiments import ConfigError


@pytest.fixture
def flat2(tmp_path):
    path = tmp_path / "flat.json"
    path.write_text(json.dumps({"kind": "constant", "expr": "2"}))
    return str(path)


@pytest.fixture(autouse=True)
def _no_env_out(monkeypatch):
    monkeypatch.delenv("THINHOMOG_OUT", raising=False)


def test_cell_flat(flat2, tmp_path, capsys):
    code = main(["cell", "--profile", flat2, "--p", "3", "--resolution", "16", "--out", str(tmp_path / "o")])
    assert code == 0
    assert capsys.readouterr().out.strip() == "q=2.000000000000 r=2.000000000000"
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["subcommand"] == "cell" and man["inputs"] == [flat2]


def test_solve1d_constant(tmp_path):
    out = tmp_path / "o"
    assert main(["solve1d", "--q", "1", "--r", "1", "--fhat", "1", "--p", "2.5", "--n", "32",
                 "--out", str(out)]) == 0
    data = np.loadtxt(out / "u1d.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1] - 1.0)) <= 1e-10
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"] == [str(out / "u1d.csv")]


def test_env_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("THINHOMOG_OUT", str(tmp_path / "env"))
    assert main(["solve1d", "--p", "2", "--n", "8", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "u1d.csv").exists()
    assert not (tmp_path / "flag").exists()


def test_solve2d_and_coeffs(flat2, tmp_path):
    out = tmp_path / "o"
    assert main(["solve2d", "--profile", flat2, "--p", "2", "--eps", "0.25", "--f", "1",
                 "--points-per-period", "8", "--layers", "6", "--out", str(out)]) == 0
    for name in ("mesh.txt", "u2d.csv", "report.json", "manifest.json"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"] and rep["extra"]["bound_ok"]
    assert main(["coeffs", "--profile", flat2, "--p", "2", "--n", "4", "--resolution", "8",
                 "--out", str(out)]) == 0
    assert (out / "coeffs.csv").read_text().startswith("x,q,r\n")


def test_study_subcommand(tmp_path, capsys):
    cfg = {"study": "convergence", "profile": {"kind": "constant", "expr": "1"}, "p": [2],
           "eps": [0.25, 0.125], "f": "1",
           "resolution": {"points_per_period": 8, "layers": 6, "n1d": 32}}
    path = tmp_path / "study.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert main(["converge", "--config", str(path), "--out", str(out), "--jobs", "1"]) == 0
    assert "PASS bound" in capsys.readouterr().out
    doc = json.loads((out / "convergence.json").read_text())
    assert set(doc) >= {"study", "config_hash", "rows", "pass"}
    assert doc["pass"] is True
    assert (out / "convergence.csv").exists() and (out / "manifest.json").exists()
    # a convergence config handed to another study subcommand is a config error
    assert main(["appendix", "--config", str(path), "--out", str(out)]) == 3


def test_exit_codes(tmp_path, flat2, capsys):
    assert main(["bogus"]) == 3
    assert main(["cell", "--profile", flat2, "--p", "2", "--frobnicate"]) == 3
    assert main(["cell", "--profile", flat2]) == 3                  # missing --p
    assert main(["cell", "--profile", flat2, "--p", "1"]) == 3
    assert main(["cell", "--profile", str(tmp_path / "missing.json"), "--p", "2"]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "expr", "expr": "0.2 + sin(2*pi*y)", "G0": 0.1, "G1": 1.2}))
    assert main(["validate", "--profile", str(bad), "--out", str(tmp_path / "o")]) == 1
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"kind": "expr", "expr": "1 + 0.5*sin(2*pi*y)", "G0": 0.5, "G1": 1.5}))
    assert main(["validate", "--profile", str(ok), "--out", str(tmp_path / "o")]) == 0


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from thinhomog import cli
    from thinhomog.plap import SolverError

    def boom(*a, **k):
        raise SolverError("no convergence")
    monkeypatch.setattr(cli, "solve_homogenized", boom)
    assert main(["solve1d", "--p", "2", "--out", str(tmp_path)]) == 2


def test_load_config_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"study": "convergence", "profile": {"kind": "constant", "expr": "1"},
                                "p": [2], "epsilonn": [0.25]}))
    with pytest.raises(ConfigError, match="epsilonn"):
        load_config(path)
    path.write_text(json.dumps({"study": "convergence", "profile": {"kind": "constant", "expr": "1"},
                                "p": [1], "eps": [0.25]}))
    with pytest.raises(ConfigError, match="p must exceed 1"):
        load_config(path)
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_roundtrip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"study": "domaindep", "profile": {"kind": "constant", "expr": "1"},
                                "p": [2, 3], "eps": [0.25], "delta": [0.1]}))
    cfg = load_config(path)
    again = tmp_path / "again.json"
    again.write_text(dump_config(cfg))
    assert load_config(again) == cfg


def test_selftest_and_console_script(tmp_path):
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    res = subprocess.run([sys.executable, "-m", "thinhomog.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "thinhomog" in res.stdout
