"""Charger coupling rows, load read-back and joint assembly."""
from __future__ import annotations

import json
from importlib import resources

import numpy as np
import pytest

from amodgrid.coupling import (CouplingEntry, CouplingMap, assemble_coordinated, assemble_uncoordinated,
                               charger_loads, charger_power_factor, fleet_operational_cost)
from amodgrid.eamod import charge_var
from amodgrid.errors import ScenarioError
from amodgrid.lp.solvers import solve
from amodgrid.pdn import BALANCED, Bus, ControllableSlot, Link, Pdn, estimate_linearization_from_base
from amodgrid.powerflow.bfm import surrogate_voltages
from amodgrid.powerflow.sweep import base_case
from amodgrid.scenario import build_scenario
from amodgrid.transport import ChargerSpec, RoadArc, RoadGraph, build_expanded_graph

from feeders import Z_LINE


def toy_doc():
    with resources.files("amodgrid.data").joinpath("toy.json").open() as fh:
        return json.load(fh)


def feeder(base_va=1e6, phases="abc"):
    slot = ControllableSlot("ch", 1, [0.0] * len(phases), [10.0] * len(phases),
                            [-np.inf] * len(phases), [np.inf] * len(phases))
    buses = [Bus(0), Bus(1, phases)]
    z = Z_LINE[:len(phases), :len(phases)]
    return Pdn("P", buses, [Link(0, 1, z, phases)], 4, BALANCED, {}, [slot], base_va=base_va)


def test_power_factor_example():
    # 0.8 kWh levels, rate 5, 0.1 h steps: 40 kW per vehicle, so 10 vehicles draw 400 kW
    road = RoadGraph([1, 2], [RoadArc(1, 2, 1.0, 1, 1)])
    g = build_expanded_graph(road, [ChargerSpec(1, 5, 20, np.zeros(4))], 4, 8, 0.1, 0.8)
    pdn = feeder(base_va=1e6)
    k = charger_power_factor(g, 0, pdn)
    assert 3 * k * 10 * pdn.base_va / 1e3 == pytest.approx(400.0)
    assert k * pdn.base_va / 1e3 * 10 == pytest.approx(400.0 / 3)
    vals = {charge_var(0, 1, 1): 6.0, charge_var(0, 1, 2): 4.0}
    loads = charger_loads(g, vals, CouplingMap([CouplingEntry(0, "P", "ch")]), [pdn])["P"]["ch"]
    assert loads[0] == pytest.approx(np.full(3, 400e3 / 3 / 1e6))
    assert np.all(loads[1:] == 0)
    zero = charger_loads(g, {}, CouplingMap([CouplingEntry(0, "P", "ch")]), [pdn])["P"]["ch"]
    assert not np.any(zero)


def test_coupling_map_checks():
    with pytest.raises(ScenarioError):
        CouplingMap([CouplingEntry(0, "P", "ch"), CouplingEntry(0, "P", "other")])
    with pytest.raises(ScenarioError):
        CouplingMap([CouplingEntry(0, "P", "ch"), CouplingEntry(1, "P", "ch")])
    cm = CouplingMap([CouplingEntry(0, "P", "nope")])
    assert any("no slot" in m for m in cm.check(2, [feeder()]))
    assert any("not attached" in m for m in cm.check(2, [feeder()]))
    two_phase = CouplingMap([CouplingEntry(0, "P", "ch")]).check(1, [feeder(phases="ab")])
    assert any("three phases" in m for m in two_phase)


def test_ample_grid_gives_same_fleet_cost():
    sc = build_scenario(toy_doc())
    unc_model, _, fleet = assemble_uncoordinated(sc)
    unc = solve(unc_model)
    params = {p.name: estimate_linearization_from_base(p, base_case(p)) for p in sc.pdns}
    coo = solve(assemble_coordinated(sc, params, fleet=fleet).model)
    a = fleet_operational_cost(fleet.expanded, unc.values, sc.chargers, sc.distance_price)
    b = fleet_operational_cost(fleet.expanded, coo.values, sc.chargers, sc.distance_price)
    assert b == pytest.approx(a, rel=1e-6)


def test_coupling_rows_pin_slot_power():
    sc = build_scenario(toy_doc())
    joint = assemble_coordinated(sc)
    sol = solve(joint.model)
    g = joint.fleet.expanded
    loads = charger_loads(g, sol.values, sc.coupling, sc.pdns)
    e = sc.coupling.entries[0]
    series = loads[e.pdn][e.slot]
    from amodgrid.powerflow.bfm import slot_setpoints
    pdn = sc.pdn(e.pdn)
    assert np.allclose(slot_setpoints(pdn, sol.values)[e.slot], series, atol=1e-9)
    assert joint.role_of("cpl:0:1:a:p") == "coupling"
    assert joint.role_of("north:V:sub:0:aa:re") == "pdn:north"
    assert joint.role_of("f:r:0:1:1") == "fleet"


def test_without_chargers_grid_part_is_base_case():
    doc = toy_doc()
    doc["chargers"] = []
    doc["trips"] = []
    sc = build_scenario(doc)
    p = sc.pdns[0]
    base = base_case(p)
    params = {p.name: estimate_linearization_from_base(p, base)}
    sol = solve(assemble_coordinated(sc, params).model)
    for s in base:
        pred = surrogate_voltages(p, sol.values, s.t)
        for b in p.buses:
            assert np.allclose(np.abs(s.voltage(b.id)), pred[b.id], atol=1e-7)
