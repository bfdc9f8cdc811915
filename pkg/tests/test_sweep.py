"""Backward/forward sweep: kernel agreement, closed-form and fixed-point oracles, unit handling."""
from __future__ import annotations

import csv
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from amodgrid import _accel
from amodgrid.errors import ConvergenceError
from amodgrid.pdn import BALANCED, Bus, Link, Pdn, denormalize, feeder_arrays
from amodgrid.powerflow.sweep import (base_case, build_injections, export_voltages_csv,
                                      powerflow_residual, solve_power_flow, solve_power_flow_series,
                                      sweep_arrays, validate_solution)

from feeders import damped_fixed_point, random_feeder, six_bus


def two_bus(z: complex, s: complex) -> Pdn:
    buses = [Bus(0, "abc"), Bus(1, "a")]
    return Pdn("two", buses, [Link(0, 1, [[z]], "a")], 1, BALANCED, {1: [s]})


def closed_form(v0: float, z: complex, s: complex) -> complex:
    """High-voltage root of the single-line power flow."""
    a = v0 ** 2 - 2 * (z.real * s.real + z.imag * s.imag)
    u2 = (a + np.sqrt(a * a - 4 * abs(z) ** 2 * abs(s) ** 2)) / 2
    return np.conj((u2 + z * np.conj(s)) / v0)


@pytest.mark.parametrize("z,s", [(0.01 + 0.02j, 0.3 + 0.1j), (0.05 + 0.05j, 0.8 + 0.4j),
                                 (0.02 + 0.08j, 0.5 - 0.2j)])
def test_two_bus_closed_form(z, s):
    sol = solve_power_flow(two_bus(z, s))
    assert abs(sol.voltage(1)[0] - closed_form(1.0, z, s)) < 1e-9
    # the source supplies the load plus the line loss |i|^2 z
    i = sol.i[1, 0]
    assert sol.s0[0] == pytest.approx(s + abs(i) ** 2 * z, abs=1e-9)


def test_numba_and_numpy_agree():
    if not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    rng = np.random.default_rng(11)
    for k in range(8):
        pdn = random_feeder(rng, n_t=6)
        for b in pdn.buses[1:]:
            m = len(b.phases)
            b.shunt = 1j * rng.uniform(0, 0.02) * np.eye(m)
        fa = feeder_arrays(pdn)
        vref = np.tile(BALANCED, (pdn.n_t, 1))
        sload = build_injections(pdn).consumption(pdn)
        a = sweep_arrays(fa, vref, sload, use_numba=True)
        b = sweep_arrays(fa, vref, sload, use_numba=False)
        assert np.max(np.abs(a[0] - b[0])) <= 1e-12
        assert np.max(np.abs(a[2] - b[2])) <= 1e-12
        assert np.array_equal(a[4], b[4])


def test_shunt_matches_fixed_point_oracle():
    pdn = six_bus(0.6, n_t=1, slots=False)
    for b in pdn.buses[1:]:
        b.shunt = np.diag([0.01j, 0.012j, 0.008j]) + 0.002j * (1 - np.eye(3))
    sol = solve_power_flow(pdn)
    oracle = damped_fixed_point(pdn, build_injections(pdn).consumption(pdn)[0])
    assert np.max(np.abs(sol.v - oracle)) < 1e-8
    assert sol.residual < 1e-8


def test_residual_is_small_on_random_feeders():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pdn = random_feeder(rng, n_t=3)
        for sol in solve_power_flow_series(pdn):
            assert sol.residual < 1e-7
            s = build_injections(pdn).consumption(pdn)[sol.t]
            assert np.abs(powerflow_residual(pdn, sol.v, s)).max() < 1e-7


def test_si_and_per_unit_agree():
    pu = six_bus(0.7, slots=False)
    si = denormalize(replace(pu, base_va=3e5, base_v=7200.0))
    a = base_case(pu)
    b = base_case(si)
    for x, y in zip(a, b):
        assert not y.per_unit
        assert np.max(np.abs(x.v - y.v / 7200.0)) <= 1e-9
        assert np.max(np.abs(x.s0 - y.s0 / 3e5)) <= 1e-9


def test_passivity_substation_covers_load_and_losses():
    rng = np.random.default_rng(8)
    for _ in range(10):
        pdn = random_feeder(rng, n_t=2)
        for sol in solve_power_flow_series(pdn):
            load = sum(pdn.load(b.id)[sol.t].sum() for b in pdn.buses[1:])
            assert sol.s0_total.real >= load.real - 1e-12


def test_nonconvergence_raises():
    heavy = two_bus(0.1 + 0.3j, 5.0 + 2.0j)
    with pytest.raises(ConvergenceError) as err:
        solve_power_flow(heavy)
    assert err.value.exit_code == 5 and err.value.t == 0
    with pytest.raises(ConvergenceError):
        solve_power_flow(six_bus(0.5, slots=False), max_iter=1)


def test_controllable_loads_add_to_consumption():
    pdn = six_bus(0.5, n_t=2)
    zero = validate_solution(pdn)
    extra = {"s3": np.full((2, 3), 0.05 + 0.0j)}
    more = validate_solution(pdn, extra)
    assert all(m.s0_total.real > z.s0_total.real for m, z in zip(more, zero))
    with pytest.raises(KeyError):
        validate_solution(pdn, {"nope": np.zeros((2, 3))})
    with pytest.raises(ValueError):
        validate_solution(pdn, {"s3": np.zeros((5, 3))})


def test_export_voltages_csv(tmp_path):
    pdn = six_bus(0.5, n_t=2)
    n = export_voltages_csv({"six": base_case(pdn)}, tmp_path / "v.csv")
    rows = list(csv.DictReader(open(tmp_path / "v.csv")))
    assert n == len(rows) == 2 * 6 * 3
    assert rows[0]["pdn"] == "six" and float(rows[0]["v_pu"]) == pytest.approx(1.0)


def test_disable_flag_selects_numpy():
    env = dict(os.environ, AMODGRID_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from amodgrid import _accel; print(_accel.USE_NUMBA)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "False"


def test_unloaded_network_is_flat():
    pdn = six_bus(0.0, n_t=1, slots=False)
    sol = solve_power_flow(pdn)
    assert np.max(np.abs(sol.v - BALANCED[None, :])) < 1e-14
    assert np.max(np.abs(sol.s0)) < 1e-14


def test_scalar_fixed_point_oracle():
    z, s = 0.01 + 0.01j, 1.0 + 0j
    v = 1.0 + 0j
    for _ in range(1000):
        new = 1.0 - z * np.conj(s / v)
        if abs(new - v) < 1e-12:
            break
        v = new
    assert abs(solve_power_flow(two_bus(z, s)).voltage(1)[0] - v) < 1e-9


def test_shunt_only_two_bus_algebraic():
    z, y = 0.01 + 0.01j, 0.5j
    pdn = two_bus(z, 0j)
    pdn.buses[1].shunt = np.array([[y]])
    sol = solve_power_flow(pdn)
    v2 = 1.0 / (1.0 + z * y)
    assert abs(sol.voltage(1)[0] - v2) < 1e-10
    assert sol.s0[0] == pytest.approx(np.conj(y * v2), abs=1e-10)
    assert abs(sol.s0[0]) > 0


def test_loadability_limit_by_bisection():
    z = 0.05 + 0.05j

    def ok(p):
        try:
            solve_power_flow(two_bus(z, complex(p, 0.0)))
            return True
        except ConvergenceError:
            return False

    lo, hi = 0.0, 20.0
    assert ok(lo) and not ok(hi)
    for _ in range(30):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    # the analytic maximum transfer for a resistive load: |v0|^2 / (2 (|z| + r))
    p_max = 1.0 / (2 * (abs(z) + z.real))
    assert lo <= p_max * 1.001
    assert lo >= 0.8 * p_max
    assert not ok(1.05 * p_max)
