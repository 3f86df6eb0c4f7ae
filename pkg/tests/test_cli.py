from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from hierpop import fixture_path
from hierpop.cli import main
from hierpop.scenario import ScenarioError, load_scenario, scenario_from_dict


def _doc(name):
    with open(fixture_path(name)) as fh:
        return json.load(fh)


def _write(tmp_path, doc, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(path)


def test_trivial_supercritical_is_unstable(tmp_path, capsys):
    out = tmp_path / "out"
    doc = _doc("S0")
    doc["grid"] = {"n": 100}
    code = main(["trivial", "--scenario", _write(tmp_path, doc), "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["trivial"]["verdict"] == "unstable"
    assert rep["schema_version"] == 1 and rep["status"] == "ok"
    assert "trivial: verdict = unstable" in capsys.readouterr().out
    assert (out / "trivial_roots.csv").exists()
    assert json.loads((out / "trivial.json").read_text())["verdict"] == "unstable"


def test_invalid_scenario_exits_1_without_files(tmp_path, capsys):
    out = tmp_path / "out"
    doc = _doc("S1")
    doc["grid"] = {"n": 4}
    assert main(["steady", "--scenario", _write(tmp_path, doc), "--out", str(out)]) == 1
    assert not out.exists()
    assert "grid.n" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    path = _write(tmp_path, '{"name": "x",\n  "model": }')
    assert main(["check", "--scenario", path, "--out", str(tmp_path / "o")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_misspelled_family_and_field():
    doc = _doc("S1")
    doc["model"]["mu"]["family"] = "afine"
    with pytest.raises(ScenarioError, match="affine"):
        scenario_from_dict(doc)
    doc = _doc("S1")
    doc["solver"] = {"tolfp": 1e-9}
    with pytest.raises(ScenarioError, match="tol_fp"):
        scenario_from_dict(doc)


def test_strict_violation_exits_3(tmp_path):
    doc = _doc("S1")
    doc["model"]["gamma1"] = {"family": "affine", "var": "s", "coef": [0.5, -1.0]}
    out = tmp_path / "out"
    assert main(["check", "--scenario", _write(tmp_path, doc), "--out", str(out), "--strict"]) == 3
    assert not out.exists()
    out2 = tmp_path / "out2"
    main(["check", "--scenario", _write(tmp_path, doc), "--out", str(out2)])
    rep = json.loads((out2 / "report.json").read_text())
    assert rep["results"]["assumptions"]["ok"] is False


def test_bad_threads_and_command(tmp_path):
    path = str(fixture_path("S1"))
    assert main(["steady", "--scenario", path, "--threads", "0", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--scenario", path])
    assert exc.value.code == 1


def test_outputs_are_deterministic(tmp_path):
    doc = _doc("S2")
    doc["grid"] = {"n": 80}
    doc["dynamics"]["T"] = 0.5
    doc["dynamics"]["output_times"] = [0, 0.25, 0.5]
    path = _write(tmp_path, doc)
    for tag in ("a", "b"):
        assert main(["simulate", "--scenario", path, "--out", str(tmp_path / tag)]) == 0
    for name in ("trajectory.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    head = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()
    assert head[0] == "time,s,p" and len(head) == 1 + 3 * 81


def test_all_on_s1(tmp_path):
    doc = _doc("S1")
    doc["grid"] = {"n": 100}
    out = tmp_path / "out"
    assert main(["all", "--scenario", _write(tmp_path, doc), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    res = rep["results"]
    assert set(res) >= {"assumptions", "existence", "steady", "stability", "persistence"}
    assert res["steady"]["converged"]
    assert abs(res["steady"]["net_reproduction"] - 1) < 1e-3
    assert res["persistence"]["relative_drift_l1"] < 2e-2
    assert res["stability"]["oracle_verdict"] == "stable"
    for name in ("steady_state.csv", "stability_roots.csv", "persistence_trajectory.csv"):
        assert name in rep["files"] and (out / name).exists()
    sc = load_scenario(fixture_path("S1"))
    assert rep["scenario"]["model"] == sc.echo()["model"]


def test_console_script_entry(tmp_path):
    doc = _doc("S0")
    doc["grid"] = {"n": 60}
    proc = subprocess.run([sys.executable, "-m", "hierpop.cli", "steady", "--scenario",
                           _write(tmp_path, doc), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "steady: P* = 0" in proc.stdout
    assert os.path.exists(tmp_path / "o" / "steady_state.csv")
