"""Linearized branch-flow LP: polygon, consistency with the exact solution, bounds and sizes."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from amodgrid.lp.audit import row_residuals
from amodgrid.lp.model import INFEASIBLE, OPTIMAL
from amodgrid.lp.solvers import HighsAdapter, solve
from amodgrid.pdn import BALANCED, Bus, Pdn, estimate_linearization_from_base, nominal_linearization
from amodgrid.powerflow.bfm import (bfm_variable_count, emit_bfm_lp, exact_point, polygon_halfplanes,
                                    s0_name, slot_setpoints, surrogate_injection, surrogate_voltages,
                                    v_name)
from amodgrid.powerflow.sweep import base_case, validate_solution

from feeders import pinned_slot_loads, random_feeder, six_bus


def inside(hp, p, q):
    return all(a * p + b * q <= r + 1e-12 for a, b, r in hp)


def test_polygon_examples():
    hp = polygon_halfplanes(1.0, 12)
    assert len(hp) == 12
    assert hp[0][2] == pytest.approx(math.cos(math.pi / 12))
    assert inside(hp, 0.97, 0.0)
    assert inside(hp, 1.0, 0.0)                       # a vertex on the circle
    c, s = math.cos(math.pi / 12), math.sin(math.pi / 12)
    assert not inside(hp, 0.97 * c, 0.97 * s)          # mid-face direction
    assert inside(hp, 0.96 * c, 0.96 * s)
    with pytest.raises(ValueError):
        polygon_halfplanes(0.0)
    with pytest.raises(ValueError):
        polygon_halfplanes(1.0, 2)


def test_polygon_area_ratio_closed_form():
    n = 12
    ratio = n / 2 * math.sin(2 * math.pi / n) / math.pi
    assert ratio > 0.95


def test_exact_solution_satisfies_rows_with_matching_parameters():
    rng = np.random.default_rng(4)
    for pdn in [six_bus(0.8, n_t=3)] + [random_feeder(rng, n_t=2) for _ in range(5)]:
        pdn = replace(pdn, u_min=0.0, u_max=2.0)
        loads = pinned_slot_loads(pdn)
        sols = validate_solution(pdn, loads)
        params = estimate_linearization_from_base(pdn, sols)
        lp = emit_bfm_lp(pdn, params, rating=False)
        vals = exact_point(pdn, sols, loads)
        names, viol, _ = row_residuals(lp, vals)
        assert viol.max() < 1e-9, names[int(np.argmax(viol))]


def test_lp_reproduces_exact_voltages_with_matching_parameters():
    pdn = six_bus(0.8, n_t=2)
    loads = pinned_slot_loads(pdn)
    sols = validate_solution(pdn, loads)
    params = estimate_linearization_from_base(pdn, sols)
    res = solve(emit_bfm_lp(pdn, params))
    for s in sols:
        pred = surrogate_voltages(pdn, res.values, s.t)
        for b in pdn.buses:
            assert np.max(np.abs(np.abs(s.voltage(b.id)) - pred[b.id])) < 1e-7
        assert np.max(np.abs(surrogate_injection(pdn, res.values, s.t) - s.s0)) < 1e-7
    sp = slot_setpoints(pdn, res.values)
    assert np.allclose(sp["s1"], loads["s1"])


def test_single_bus_network():
    pdn = Pdn("solo", [Bus(0)], [], 2, BALANCED)
    lp = emit_bfm_lp(pdn, nominal_linearization(pdn))
    assert lp.n_variables == bfm_variable_count(pdn) == 2 * (9 + 6)
    sol = solve(lp)
    assert sol.status == OPTIMAL
    assert abs(sol[s0_name("solo", 0, "a", "re")]) < 1e-9


def test_tight_rating_is_infeasible():
    pdn = six_bus(0.5, n_t=1)
    total = abs(sum(pdn.load(b.id)[0].sum() for b in pdn.buses) + sum(
        pinned_slot_loads(pdn)[s.id][0].sum() for s in pdn.slots))
    tight = replace(pdn, rating=0.5 * total)
    sol = HighsAdapter().solve(emit_bfm_lp(tight, nominal_linearization(tight)))
    assert sol.status == INFEASIBLE
    loose = replace(pdn, rating=2 * total)
    assert HighsAdapter().solve(emit_bfm_lp(loose, nominal_linearization(loose))).status == OPTIMAL


def test_voltage_bounds_become_squared_bounds():
    pdn = replace(six_bus(0.5, n_t=1), u_min=0.95, u_max=1.05)
    lp = emit_bfm_lp(pdn, nominal_linearization(pdn))
    v = lp.variables[v_name("six", 3, 0, "a", "a")]
    assert v.lb == pytest.approx(0.95 ** 2) and v.ub == pytest.approx(1.05 ** 2)
    off = emit_bfm_lp(pdn, nominal_linearization(pdn), voltage_limits=False)
    w = off.variables[v.name]
    assert w.lb <= 0.0 and math.isinf(w.ub)


def test_variable_count_matches_construction():
    rng = np.random.default_rng(9)
    for _ in range(10):
        pdn = random_feeder(rng, n_t=int(rng.integers(1, 4)))
        assert emit_bfm_lp(pdn, nominal_linearization(pdn)).n_variables == bfm_variable_count(pdn)


def test_parameter_shape_mismatch_is_rejected():
    pdn = six_bus(0.5)
    par = nominal_linearization(pdn)
    par.gamma = par.gamma[:-1]
    with pytest.raises(ValueError):
        emit_bfm_lp(pdn, par)


def test_base_case_parameters_keep_error_small():
    pdn = six_bus(0.5)
    par = estimate_linearization_from_base(pdn, base_case(pdn))
    assert par.source == "base-case power flow"
    assert solve(emit_bfm_lp(pdn, par)).status == OPTIMAL


def test_polygon_origin_and_vertices():
    hp = polygon_halfplanes(1.0, 12)
    assert all(r == pytest.approx(0.965926, abs=1e-6) for _, _, r in hp)
    assert inside(hp, 0.0, 0.0)
    for k, (a, b, r) in enumerate(hp):
        phi = (2 * k + 1) * math.pi / 12
        for side in (-1, 1):
            p, q = math.cos(phi + side * math.pi / 12), math.sin(phi + side * math.pi / 12)
            assert a * p + b * q == pytest.approx(r, abs=1e-12)


def two_bus_lp(load: complex, rating: float = math.inf) -> Pdn:
    from amodgrid.pdn import Link
    from feeders import Z_LINE
    loads = {1: np.full((1, 3), load)}
    return Pdn("tb", [Bus(0), Bus(1)], [Link(0, 1, Z_LINE)], 1, BALANCED, loads, rating=rating,
               u_min=0.0, u_max=2.0)


def test_two_bus_unloaded_voltage_is_source_projection():
    pdn = two_bus_lp(0j)
    res = solve(emit_bfm_lp(pdn, nominal_linearization(pdn)))
    assert np.allclose(surrogate_voltages(pdn, res.values, 0)[1], 1.0, atol=1e-9)


def test_two_bus_rating_below_load_is_infeasible():
    # 0.5 p.u. of total load against a 0.4 p.u. rating
    pdn = two_bus_lp(0.5 / 3, rating=0.4)
    assert HighsAdapter().solve(emit_bfm_lp(pdn, nominal_linearization(pdn))).status == INFEASIBLE
