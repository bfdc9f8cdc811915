"""Scenario validation, the run pipeline and the command-line interface."""
from __future__ import annotations

import csv
import json
import subprocess
import sys
from importlib import resources

import pytest

from amodgrid import cli, pipeline
from amodgrid.errors import InfeasibleError, ScenarioError, SolverError
from amodgrid.pipeline import run_scenario
from amodgrid.scenario import (assign_chargers, build_scenario, validate_document,
                               validate_scenario)


def data_path(name):
    return str(resources.files("amodgrid.data").joinpath(name))


def toy_doc():
    return json.loads(open(data_path("toy.json")).read())


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def pointers(doc):
    return [f.pointer for f in validate_document(doc).findings]


def test_bundled_scenarios_are_valid():
    for name in ("toy.json", "tight_rating.json"):
        diag = validate_scenario(data_path(name))
        assert diag.ok, [str(f) for f in diag.findings]
        assert diag.statistics["total"] > 0


def test_dangling_charger_bus_has_pointer():
    doc = toy_doc()
    doc["chargers"][0]["bus"] = "nowhere"
    assert "/chargers/0/bus" in pointers(doc)


def test_price_length_finding():
    doc = toy_doc()
    doc["pdns"][0]["price_per_kwh"] = [0.1] * 3
    assert "/pdns/0/price_per_kwh" in pointers(doc)


def test_schema_errors_carry_pointers():
    doc = toy_doc()
    doc["horizon"]["n_t"] = "eight"
    del doc["trips"][0]["demand"]
    ptr = pointers(doc)
    assert "/horizon/n_t" in ptr and "/trips/0" in ptr


def test_network_findings_are_reported():
    doc = toy_doc()
    doc["pdns"][0]["links"].append({"from": "n2", "to": "sub",
                                    "z": doc["pdns"][0]["links"][0]["z"]})
    assert any(p.startswith("/pdns/0") for p in pointers(doc))


def test_seeded_charger_assignment():
    doc = toy_doc()
    a = assign_chargers(doc, 1)["chargers"][0]["bus"]
    assert a == assign_chargers(doc, 1)["chargers"][0]["bus"]
    assert a in {"n1", "n2"}                         # three-phase, not the reference
    picks = {assign_chargers(doc, s)["chargers"][0]["bus"] for s in range(20)}
    assert picks == {"n1", "n2"}
    assert doc["chargers"][0]["bus"] is None


def test_build_rejects_invalid_document():
    doc = toy_doc()
    doc["trips"][0]["origin"] = "zz"
    with pytest.raises(ScenarioError) as err:
        build_scenario(doc)
    assert err.value.exit_code == 2 and err.value.findings


def test_base_mode_has_no_violations():
    res = run_scenario(build_scenario(toy_doc()), "base")
    assert len(res.solutions["north"]) == 8
    assert res.report["violations"]["voltage_events"] == 0
    assert res.report["violations"]["ds_viol_vah"] == 0.0


def test_run_writes_outputs_and_manifest(tmp_path):
    sc = build_scenario(toy_doc())
    res = run_scenario(sc, "coordinated", tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["mode"] == "coordinated"
    assert man["linearization"] == {"north": "base-case power flow"}
    for key in ("model", "names", "solution", "report", "voltages", "fleet_schedule", "charging"):
        assert (tmp_path / man["files"][key]["path"]).exists(), key
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["counts"]["lp_variables"] == res.model.n_variables
    assert rep["surrogate_max_voltage_error_pu"] < 0.01
    rows = list(csv.DictReader(open(tmp_path / "charging.csv")))
    assert len(rows) == sc.n_t


def test_runs_are_reproducible(tmp_path):
    sc = build_scenario(toy_doc())
    run_scenario(sc, "uncoordinated", tmp_path / "a")
    run_scenario(build_scenario(toy_doc()), "uncoordinated", tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    for key in ("model", "solution", "report", "fleet_schedule"):
        assert ma["files"][key]["sha256"] == mb["files"][key]["sha256"], key
    assert ma["scenario_sha256"] == mb["scenario_sha256"]


def test_infeasible_run_records_failure(tmp_path):
    doc = toy_doc()
    doc["chargers"] = []
    doc["fleet"]["final"] = {"min_soc_fraction": 1.0}
    with pytest.raises(InfeasibleError):
        run_scenario(build_scenario(doc), "uncoordinated", tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed" and man["error"]["exit_code"] == 3


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    good = data_path("toy.json")
    assert cli.main(["validate", good]) == 0
    bad = toy_doc()
    bad["chargers"][0]["bus"] = "nowhere"
    assert cli.main(["validate", write(tmp_path, bad)]) == 2
    assert cli.main(["run", "--mode", "base", "--scenario", write(tmp_path, bad),
                     "--out", str(tmp_path / "o1")]) == 2
    inf = toy_doc()
    inf["chargers"] = []
    inf["fleet"]["final"] = {"min_soc_fraction": 1.0}
    assert cli.main(["run", "--mode", "uncoordinated", "--scenario", write(tmp_path, inf, "i.json"),
                     "--out", str(tmp_path / "o2")]) == 3
    heavy = toy_doc()
    heavy["pdns"][0]["loads"][0]["nominal"] = [[40.0, 10.0]] * 3
    assert cli.main(["run", "--mode", "base", "--scenario", write(tmp_path, heavy, "h.json"),
                     "--out", str(tmp_path / "o3")]) == 5

    def broken(*a, **k):
        raise SolverError("backend unavailable")

    monkeypatch.setattr(pipeline, "make_adapter", broken)
    assert cli.main(["run", "--mode", "uncoordinated", "--scenario", good,
                     "--out", str(tmp_path / "o4")]) == 4
    err = capsys.readouterr().err
    assert "SolverError" in err and "InfeasibleError" in err and "ConvergenceError" in err


def test_cli_entry_point_runs(tmp_path):
    out = subprocess.run([sys.executable, "-m", "amodgrid", "run", "--mode", "uncoordinated",
                          "--scenario", data_path("tight_rating.json"), "--out", str(tmp_path),
                          "--solver", "mps-python"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "rating events=" in out.stdout
    assert (tmp_path / "rating_events.csv").exists()
