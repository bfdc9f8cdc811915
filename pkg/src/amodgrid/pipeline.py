"""Run orchestration: base, uncoordinated and coordinated modes."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (SERIOUS_DU, build_report, emit_report, energy_and_cost_accounting,
                       substation_rows, violations)
from .coupling import (assemble_coordinated, assemble_uncoordinated, build_fleet, charger_loads,
                       charger_power_factor, fleet_operational_cost)
from .eamod import charging_precheck, extract_fleet_solution
from .errors import AmodGridError, InfeasibleError, SolverError
from .lp.model import INFEASIBLE, OPTIMAL
from .lp.mps import export_mps
from .lp.solvers import make_adapter, solve
from .pdn import as_per_unit, estimate_linearization_from_base
from .powerflow.bfm import surrogate_voltages
from .powerflow.sweep import base_case, export_voltages_csv, validate_solution
from .scenario import Scenario
from .transport import model_statistics

log = logging.getLogger(__name__)

MODES = ("base", "uncoordinated", "coordinated")


@dataclass
class RunResult:
    mode: str
    report: dict
    base_solutions: dict
    solutions: dict
    loads: dict = field(default_factory=dict)
    lp_solution: object = None
    model: object = None
    schedule: object = None
    params: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    files: dict = field(default_factory=dict)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_solution(path, solution) -> None:
    """Plain value file: status and objective header, then ``name value`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# status: {solution.status}\n")
        fh.write(f"# objective: {solution.objective!r}\n")
        for name, val in (solution.values or {}).items():
            fh.write(f"{name} {val!r}\n")


def _solve(model, scenario: Scenario, solver: str | None):
    name = solver or scenario.solver.get("name", "highs")
    kw = {}
    if "time_limit" in scenario.solver:
        kw["time_limit"] = scenario.solver["time_limit"]
    adapter = make_adapter(name, **kw)
    sol = solve(model, adapter, audit_tol=scenario.solver.get("audit_tol", 1e-6))
    if sol.status == INFEASIBLE:
        raise InfeasibleError(f"{model.name} problem is infeasible ({sol.meta.get('message', '')})", sol)
    if sol.status != OPTIMAL:
        raise SolverError(f"{model.name} problem ended with status {sol.status!r}")
    return sol


def run_scenario(scenario: Scenario, mode: str, out_dir=None, solver: str | None = None) -> RunResult:
    """Execute one mode. When ``out_dir`` is given every artifact and a manifest are written there."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    stages = []
    manifest = {
        "package": "amodgrid", "version": __version__, "scenario": scenario.name,
        "scenario_sha256": hashlib.sha256(json.dumps(scenario.source, sort_keys=True).encode()).hexdigest(),
        "mode": mode, "seed": scenario.seed, "solver": solver or scenario.solver.get("name", "highs"),
        "stages": stages, "linearization": {}, "files": {}, "status": "running",
    }
    try:
        res = _run(scenario, mode, out, solver, stages, manifest)
        manifest["status"] = "ok"
        return res
    except AmodGridError as exc:
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(exc).__name__, "stage": exc.stage, "message": str(exc),
                             "exit_code": exc.exit_code}
        raise
    finally:
        if out is not None:
            manifest["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            for key, fname in list(manifest["files"].items()):
                p = out / fname
                if p.exists():
                    manifest["files"][key] = {"path": fname, "sha256": _sha256(p)}
            with open(out / "manifest.json", "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)


def _run(scenario, mode, out, solver, stages, manifest) -> RunResult:
    pdns = [as_per_unit(p) for p in scenario.pdns]
    dt = scenario.step_hours
    files = manifest["files"]

    stages.append("base-power-flow")
    base = {p.name: base_case(p) for p in pdns}
    loads = {p.name: {} for p in pdns}
    sols = base
    lp_sol = model = schedule = fleet = None
    params = {}
    rebal = 0.0
    extra = {"counts": {}, "objective": None}

    if mode != "base":
        stages.append("routing")
        fleet = build_fleet(scenario)
        for msg in charging_precheck(fleet.expanded, scenario.boundary):
            log.warning("%s", msg)
        extra["counts"] = model_statistics(fleet.expanded, fleet.routes, pdns).as_dict()
        if mode == "uncoordinated":
            stages.append("assemble-uncoordinated")
            model, _, fleet = assemble_uncoordinated(scenario, fleet)
        else:
            stages.append("linearization")
            for p in pdns:
                params[p.name] = estimate_linearization_from_base(p, base[p.name])
                manifest["linearization"][p.name] = params[p.name].source
            stages.append("assemble-coordinated")
            joint = assemble_coordinated(scenario, params, fleet=fleet)
            model = joint.model
        extra["counts"]["lp_variables"] = model.n_variables
        extra["counts"]["lp_rows"] = model.n_constraints
        if out is not None:
            export_mps(model, out / "model.mps")
            files["model"] = "model.mps"
            files["names"] = "model.names.json"
        stages.append("solve")
        lp_sol = _solve(model, scenario, solver)
        if out is not None:
            write_solution(out / "solution.txt", lp_sol)
            files["solution"] = "solution.txt"
        extra["objective"] = lp_sol.objective
        extra["lp"] = {"status": lp_sol.status,
                       "max_residual": lp_sol.meta.get("max_residual"),
                       "max_bound_violation": lp_sol.meta.get("max_bound_violation")}
        schedule = extract_fleet_solution(fleet.expanded, lp_sol, fleet.routes, scenario.distance_price,
                                          model=model)
        rebal = schedule.rebalancing_cost
        loads = charger_loads(fleet.expanded, lp_sol.values, scenario.coupling, pdns)
        stages.append("exact-validation")
        sols = {p.name: validate_solution(p, loads[p.name]) for p in pdns}
        if mode == "coordinated":
            gap = 0.0
            for p in pdns:
                for s in sols[p.name]:
                    pred = surrogate_voltages(p, lp_sol.values, s.t)
                    for k, b in enumerate(p.buses):
                        exact = np.abs(s.voltage(b.id))
                        gap = max(gap, float(np.max(np.abs(exact - pred[b.id]))))
            extra["surrogate_max_voltage_error_pu"] = gap

    stages.append("analysis")
    serious = scenario.analysis.get("serious_du", SERIOUS_DU)
    viol = violations(pdns, sols, dt, serious)
    energy = energy_and_cost_accounting(pdns, base, sols, loads, scenario.pdn_price, dt, rebal)
    if fleet is not None:
        energy.fleet_operational_cost = fleet_operational_cost(fleet.expanded, lp_sol.values,
                                                               scenario.chargers, scenario.distance_price)
    per_pdn = {}
    for p in pdns:
        v = violations([p], {p.name: sols[p.name]}, dt, serious)
        per_pdn[p.name] = {"du_viol_pu_h": v.du_viol, "ds_viol_vah": v.ds_viol,
                           "voltage_events": v.n_voltage_events, "rating_events": v.n_rating_events,
                           "max_iterations": max((s.iterations for s in sols[p.name]), default=0),
                           "max_residual": max((s.residual for s in sols[p.name]), default=0.0)}
    extra["per_pdn"] = per_pdn
    report = build_report(mode, scenario.name, viol, energy, extra)

    if out is not None:
        sub = []
        for p in pdns:
            sub += substation_rows(p, sols[p.name], base[p.name])
        charging = []
        if fleet is not None:
            for e in scenario.coupling.entries:
                p = next(q for q in pdns if q.name == e.pdn)
                k = charger_power_factor(fleet.expanded, e.charger, p)
                for t in range(scenario.n_t):
                    veh = schedule.occupancy[e.charger, t]
                    charging.append((scenario.chargers[e.charger].id, e.pdn, t, f"{veh:.9g}",
                                     f"{3 * k * veh * p.base_va / 1e3:.6f}"))
        written = emit_report(report, viol, out, scenario.analysis.get("du_bin", 0.005),
                              scenario.analysis.get("ds_bin_va", 1e4), sub, charging)
        files.update(written)
        export_voltages_csv(sols, out / "voltages.csv")
        files["voltages"] = "voltages.csv"
        if schedule is not None:
            schedule.to_csv(out / "fleet_schedule.csv", fleet.expanded)
            files["fleet_schedule"] = "fleet_schedule.csv"
    stages.append("done")
    return RunResult(mode, report, base, sols, loads, lp_sol, model, schedule, params, list(stages),
                     dict(files))
