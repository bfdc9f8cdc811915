"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
from __future__ import annotations

import json
import math
import time
from importlib import resources

import numpy as np
import pytest

from amodgrid.coupling import assemble_coordinated, assemble_uncoordinated, fleet_operational_cost
from amodgrid.lp.audit import check_feasibility
from amodgrid.lp.mps import export_mps, format_number
from amodgrid.lp.solvers import solve
from amodgrid.pdn import estimate_linearization_from_base
from amodgrid.pipeline import run_scenario
from amodgrid.powerflow.bfm import emit_bfm_lp, polygon_halfplanes, surrogate_voltages
from amodgrid.powerflow.sweep import base_case, build_injections, solve_power_flow_series, \
    validate_solution
from amodgrid.scenario import build_scenario, load_scenario
from amodgrid.transport import model_statistics

from feeders import damped_fixed_point, pinned_slot_loads, random_feeder, random_scenario_doc, six_bus


def verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def bundled(name: str):
    return load_scenario(str(resources.files("amodgrid.data").joinpath(name)))


@pytest.fixture(scope="module")
def runs():
    """Every mode of both bundled scenarios, timed."""
    out = {}
    for name in ("toy.json", "tight_rating.json"):
        sc = bundled(name)
        for mode in ("base", "uncoordinated", "coordinated"):
            t0 = time.perf_counter()
            res = run_scenario(sc, mode)
            out[(name, mode)] = (sc, res, time.perf_counter() - t0)
    return out


# 1 ------------------------------------------------------------------------------------

def test_criterion_1_powerflow_oracle(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    n_feeders = 12
    for k in range(n_feeders):
        pdn = random_feeder(rng, n_t=1, name=f"r{k}")
        sol = solve_power_flow_series(pdn)[0]
        s_load = build_injections(pdn).consumption(pdn)[0]
        oracle = damped_fixed_point(pdn, s_load)
        worst = max(worst, float(np.max(np.abs(sol.v - oracle))))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, worst <= 1e-6 and elapsed < 10.0,
            f"{n_feeders} feeders, max |dv| = {worst:.2e} p.u. (tol 1e-6), {elapsed:.2f} s (< 10 s)")


# 2 ------------------------------------------------------------------------------------

def _surrogate_gap(loading: float) -> float:
    pdn = six_bus(loading)
    params = estimate_linearization_from_base(pdn, base_case(pdn))
    sol = solve(emit_bfm_lp(pdn, params))
    exact = validate_solution(pdn, pinned_slot_loads(pdn))
    gap = 0.0
    for s in exact:
        pred = surrogate_voltages(pdn, sol.values, s.t)
        for b in pdn.buses:
            gap = max(gap, float(np.max(np.abs(np.abs(s.voltage(b.id)) - pred[b.id]))))
    return gap


def test_criterion_2_surrogate_fidelity(capsys):
    t0 = time.perf_counter()
    g50 = _surrogate_gap(0.5)
    g80 = _surrogate_gap(0.8)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 2, g50 <= 0.005 and g80 <= 0.01 and elapsed < 60.0,
            f"max |u_lp - u_exact| = {g50:.2e} at 50% (tol 5e-3), {g80:.2e} at 80% (tol 1e-2), "
            f"{elapsed:.2f} s")


# 3 ------------------------------------------------------------------------------------

def test_criterion_3_feasibility_audit(runs, capsys):
    worst_row, worst_fleet, n = 0.0, 0.0, 0
    ok = True
    for (name, mode), (sc, res, _) in runs.items():
        if res.model is None:
            continue
        n += 1
        rep = check_feasibility(res.model, res.lp_solution, 1e-6)
        ok &= rep.passed
        worst_row = max(worst_row, rep.max_residual, rep.max_bound_violation)
        worst_fleet = max(worst_fleet, res.schedule.max_residual)
    ok &= worst_fleet <= 1e-6
    verdict(capsys, 3, ok and n == 4,
            f"{n} solved LPs, max row/bound residual {worst_row:.2e}, "
            f"max fleet conservation residual {worst_fleet:.2e} (tol 1e-6)")


# 4 ------------------------------------------------------------------------------------

def test_criterion_4_directional_benefit(runs, capsys):
    _, unc, t_unc = runs[("tight_rating.json", "uncoordinated")]
    _, coo, t_coo = runs[("tight_rating.json", "coordinated")]
    vu, vc = unc.report["violations"], coo.report["violations"]
    cu = unc.report["energy"]["fleet_operational_cost"]
    cc = coo.report["energy"]["fleet_operational_cost"]
    ok = (vu["ds_viol_vah"] > 0 and vc["ds_viol_vah"] == 0 and cc >= cu
          and vc["du_viol_pu_h"] <= vu["du_viol_pu_h"] and t_unc + t_coo < 300)
    verdict(capsys, 4, ok,
            f"ds_viol {vu['ds_viol_vah']:.1f} -> {vc['ds_viol_vah']:.1f} VAh, "
            f"du_viol {vu['du_viol_pu_h']:.2e} -> {vc['du_viol_pu_h']:.2e} p.u.h, "
            f"fleet cost {cu:.4f} -> {cc:.4f} USD ({100 * (cc - cu) / cu:+.2f}%), "
            f"{t_unc + t_coo:.1f} s")


# 5 ------------------------------------------------------------------------------------

def test_criterion_5_accounting(runs, capsys):
    worst = 0.0
    min_loss = math.inf
    for (name, mode), (sc, res, _) in runs.items():
        e = res.report["energy"]
        scale = max(1.0, abs(e["e_amod"]))
        worst = max(worst, abs(e["e_amod"] - e["e_charge"] - e["e_losses"]) / scale)
        cs = max(1.0, abs(e["c_amod"]))
        worst = max(worst, abs(e["c_losses"] - (e["c_amod"] - e["c_charge"])) / cs)
        if mode != "base":
            # independent charge energy from the fleet schedule
            kwh = sum(float(res.schedule.occupancy[s, :].sum()) * ch.rate * sc.unit_kwh
                      for s, ch in enumerate(sc.chargers))
            worst = max(worst, abs(kwh - e["e_charge"]) / max(1.0, kwh))
        min_loss = min(min_loss, e["e_losses"])
    verdict(capsys, 5, worst <= 1e-9 and min_loss >= -1e-9,
            f"{len(runs)} runs, max relative identity error {worst:.2e} (tol 1e-9), "
            f"min E_losses {min_loss:.3e} kWh")


# 6 ------------------------------------------------------------------------------------

def test_criterion_6_decoupled_limit(capsys):
    sc = bundled("tight_rating.json")
    assert all(not np.any(b.shunt) for p in sc.pdns for b in p.buses)
    unc_model, _, fleet = assemble_uncoordinated(sc)
    unc = solve(unc_model)
    joint = assemble_coordinated(sc, relax=True, fleet=fleet)
    coo = solve(joint.model)
    f_unc = fleet_operational_cost(fleet.expanded, unc.values, sc.chargers, sc.distance_price)
    f_coo = fleet_operational_cost(fleet.expanded, coo.values, sc.chargers, sc.distance_price)
    # the relaxed joint objective is the fleet cost plus a constant grid term
    const = coo.objective - f_coo
    rel_obj = abs(unc.objective - f_unc) / max(1.0, abs(unc.objective))
    rel = abs(f_coo - f_unc) / max(1e-12, abs(f_unc))
    verdict(capsys, 6, rel <= 1e-6 and rel_obj <= 1e-9,
            f"fleet objective uncoordinated {f_unc:.9f}, relaxed coordinated {f_coo:.9f}, "
            f"relative gap {rel:.2e} (tol 1e-6); constant grid term {const:.6f}")


# 7 ------------------------------------------------------------------------------------

def test_criterion_7_polygon(capsys):
    rng = np.random.default_rng(7)
    s_max = 2.5
    hp = np.array(polygon_halfplanes(s_max, 12))
    pts = rng.uniform(-1.2 * s_max, 1.2 * s_max, (10_000, 2))
    acc = np.all(pts @ hp[:, :2].T <= hp[:, 2] + 1e-12, axis=1)
    outside = np.hypot(pts[:, 0], pts[:, 1]) > s_max
    r = s_max * np.sqrt(rng.uniform(0, 1, 10_000))
    th = rng.uniform(0, 2 * math.pi, 10_000)
    inner = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    ratio = float(np.mean(np.all(inner @ hp[:, :2].T <= hp[:, 2], axis=1)))
    n_bad = int(np.sum(acc & outside))
    verdict(capsys, 7, n_bad == 0 and ratio >= 0.95,
            f"{int(acc.sum())} of 10000 accepted, {n_bad} outside the circle, "
            f"in-circle acceptance {ratio:.4f} (>= 0.95)")


# 8 ------------------------------------------------------------------------------------

def _bfm_count(pdn) -> int:
    per_t = 0
    for b in pdn.buses:
        m = len(b.phases)
        per_t += m + 2 * (m * (m - 1) // 2)
    per_t += sum(2 * len(l.phases) for l in pdn.links)
    per_t += 2 * len(pdn.bus(pdn.reference).phases)
    per_t += sum(2 * len(pdn.bus(s.bus).phases) for s in pdn.slots)
    return pdn.n_t * per_t


def test_criterion_8_model_sizes(capsys):
    rows = []
    ok = True
    for k in range(5):
        sc = build_scenario(random_scenario_doc(np.random.default_rng(100 + k), f"shape{k}"))
        joint = assemble_coordinated(sc)
        g = joint.fleet.expanded
        names = joint.model.variable_names()
        n_pdn = {p.name: sum(1 for v in names if v.startswith(f"{p.name}:")) for p in sc.pdns}
        n_fleet = len(names) - sum(n_pdn.values())
        stats = model_statistics(g, joint.fleet.routes, sc.pdns)
        n_m = joint.fleet.routes.n_m
        formula = (g.n_t * g.n_c * (len(sc.road.arcs) + len(sc.chargers)) + g.n_c * n_m
                   + g.n_t * g.n_c * len(sc.road.vertices) + g.n_c * len(sc.road.vertices))
        ok &= n_fleet == stats.eamod == formula
        ok &= all(n_pdn[p.name] == stats.pdn[p.name] == _bfm_count(p) for p in sc.pdns)
        ok &= len(names) == stats.total
        rows.append(f"{n_fleet}+{sum(n_pdn.values())}={stats.total}")
    verdict(capsys, 8, ok, "constructed = formula on 5 shapes: " + ", ".join(rows))


# 9 ------------------------------------------------------------------------------------

def parse_mps(path):
    """Minimal independent MPS reader (whitespace-separated, blank-free names)."""
    rows, cols, rhs, bounds = {}, {}, {}, {}
    obj_row = None
    section = None
    for line in open(path, encoding="ascii"):
        if not line.strip():
            continue
        if not line[0].isspace():
            section = line.split()[0]
            continue
        f = line.split()
        if section == "ROWS":
            if f[0] == "N":
                obj_row = f[1]
            else:
                rows[f[1]] = f[0]
        elif section == "COLUMNS":
            c = cols.setdefault(f[0], {})
            for r, val in zip(f[1::2], f[2::2]):
                c[r] = float(val)
        elif section == "RHS":
            for r, val in zip(f[1::2], f[2::2]):
                rhs[r] = float(val)
        elif section == "BOUNDS":
            lb, ub = bounds.get(f[2], (0.0, math.inf))
            kind = f[0]
            if kind == "FX":
                lb = ub = float(f[3])
            elif kind == "FR":
                lb, ub = -math.inf, math.inf
            elif kind == "MI":
                lb = -math.inf
            elif kind == "LO":
                lb = float(f[3])
            elif kind == "UP":
                ub = float(f[3])
            bounds[f[2]] = (lb, ub)
    return obj_row, rows, cols, rhs, bounds


def test_criterion_9_mps_round_trip(tmp_path, capsys):
    sc = bundled("toy.json")
    model = assemble_coordinated(sc).model
    path = export_mps(model, tmp_path / "joint.mps")
    names = json.loads((tmp_path / "joint.names.json").read_text())
    obj_row, rows, cols, rhs, bounds = parse_mps(path)
    cmap, rmap = names["columns"], names["rows"]
    sense = {"E": "=", "L": "<=", "G": ">="}
    problems = []

    def q(x):
        return float(format_number(x))

    if {cmap[c] for c in cols} != set(model.variables):
        problems.append("column set")
    if {rmap[r] for r in rows} != set(model.constraints):
        problems.append("row set")
    for r, code in rows.items():
        con = model.constraints[rmap[r]]
        if sense[code] != con.sense or rhs.get(r, 0.0) != q(con.rhs):
            problems.append(f"row {rmap[r]}")
    for c, entries in cols.items():
        var = model.variables[cmap[c]]
        if entries.get(obj_row, 0.0) != q(var.obj):
            problems.append(f"objective {cmap[c]}")
        got = {rmap[r]: v for r, v in entries.items() if r != obj_row}
        want = {r: q(con.terms[cmap[c]]) for r, con in model.constraints.items()
                if cmap[c] in con.terms}
        if got != want:
            problems.append(f"column {cmap[c]}")
        lb, ub = bounds.get(c, (0.0, math.inf))
        want_b = (q(var.lb) if math.isfinite(var.lb) else var.lb,
                  q(var.ub) if math.isfinite(var.ub) else var.ub)
        if (lb, ub) != want_b:
            problems.append(f"bounds {cmap[c]}")
    detail = (f"{len(cols)} columns, {len(rows)} rows re-parsed; "
              f"{len(problems)} mismatches {problems[:3]}")
    pulp = None
    try:
        import pulp
    except ImportError:
        detail += "; pulp not installed"
    if pulp is not None:
        _, lp = pulp.LpProblem.fromMPS(str(path))
        n_ok = len(lp.variables()) == len(cols) and len(lp.constraints()) == len(rows)
        if not n_ok:
            problems.append("pulp sizes")
        detail += f"; pulp sees {len(lp.variables())} columns, {len(lp.constraints())} rows"
    verdict(capsys, 9, not problems, detail)
