"""Violation integrals, energy and cost accounting, and report files.

Everything here works on exact power-flow solutions; surrogate (LP) values
are never used to judge constraint violations.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .pdn import Pdn

SERIOUS_DU = 0.005
REPORT_SCHEMA_VERSION = 1


def voltage_deviation(u, u_min: float, u_max: float):
    """Signed excursion outside ``[u_min, u_max]``: negative below, positive above, else 0."""
    u = np.asarray(u, dtype=float)
    return np.minimum(u - u_min, 0.0) + np.maximum(u - u_max, 0.0)


@dataclass
class VoltageEvent:
    pdn: str
    bus: str
    phase: str
    t: int
    u: float
    du: float


@dataclass
class RatingEvent:
    pdn: str
    t: int
    s_va: float
    rating_va: float
    ds_va: float


@dataclass
class ViolationReport:
    step_hours: float
    voltage_events: list = field(default_factory=list)
    rating_events: list = field(default_factory=list)
    serious_threshold: float = SERIOUS_DU

    @property
    def du_viol(self) -> float:
        """Sum of ``|du| * step_hours`` over voltage events (p.u.*h)."""
        return self.step_hours * float(sum(abs(e.du) for e in self.voltage_events))

    @property
    def ds_viol(self) -> float:
        """Sum of ``ds * step_hours`` over rating events (VA*h)."""
        return self.step_hours * float(sum(e.ds_va for e in self.rating_events))

    @property
    def n_voltage_events(self) -> int:
        return len(self.voltage_events)

    @property
    def n_serious_voltage_events(self) -> int:
        return sum(1 for e in self.voltage_events if abs(e.du) > self.serious_threshold)

    @property
    def n_rating_events(self) -> int:
        return len(self.rating_events)

    def merged(self, other: "ViolationReport") -> "ViolationReport":
        return ViolationReport(self.step_hours, self.voltage_events + other.voltage_events,
                               self.rating_events + other.rating_events, self.serious_threshold)


def _pu_voltage(pdn: Pdn, sol) -> np.ndarray:
    return np.abs(sol.v) / (1.0 if sol.per_unit else pdn.base_v)


def _s0_va(pdn: Pdn, sol) -> complex:
    return sol.s0_total * (pdn.base_va if sol.per_unit else 1.0)


def _rating_va(pdn: Pdn) -> float:
    return pdn.rating * (pdn.base_va if pdn.per_unit else 1.0)


def voltage_violation_integral(pdn: Pdn, solutions, step_hours: float,
                               serious_threshold: float = SERIOUS_DU) -> ViolationReport:
    """One event per (bus, phase, t) whose magnitude leaves its band. The reference bus is skipped."""
    rep = ViolationReport(step_hours, serious_threshold=serious_threshold)
    idx = pdn.bus_index()
    for sol in solutions:
        u = _pu_voltage(pdn, sol)
        for b in pdn.buses:
            if b.id == pdn.reference:
                continue
            lo, hi = pdn.bounds_for(b.id)
            for p in b.phases:
                val = u[idx[b.id], "abc".index(p)]
                du = float(voltage_deviation(val, lo, hi))
                if du != 0.0:
                    rep.voltage_events.append(VoltageEvent(pdn.name, str(b.id), p, sol.t, float(val), du))
    return rep


def substation_violation_integral(pdn: Pdn, solutions, step_hours: float,
                                  rel_tol: float = 0.0) -> ViolationReport:
    """One event per step where ``|sum of phase injections|`` exceeds the rating.

    Excess below ``rel_tol * rating`` is treated as numerical noise.
    """
    rep = ViolationReport(step_hours)
    rating = _rating_va(pdn)
    if not math.isfinite(rating):
        return rep
    for sol in solutions:
        s = abs(_s0_va(pdn, sol))
        ds = max(s - rating, 0.0)
        if ds > rel_tol * rating:
            rep.rating_events.append(RatingEvent(pdn.name, sol.t, s, rating, ds))
    return rep


def violations(pdns, solutions: dict, step_hours: float, serious_threshold: float = SERIOUS_DU,
               rel_tol: float = 0.0) -> ViolationReport:
    rep = ViolationReport(step_hours, serious_threshold=serious_threshold)
    for pdn in pdns:
        rep = rep.merged(voltage_violation_integral(pdn, solutions[pdn.name], step_hours,
                                                    serious_threshold))
        rep = rep.merged(substation_violation_integral(pdn, solutions[pdn.name], step_hours, rel_tol))
    return rep


# -- energy and cost ---------------------------------------------------------------

@dataclass
class EnergyReport:
    e_total: float = 0.0
    e_base: float = 0.0
    e_amod: float = 0.0
    e_charge: float = 0.0
    e_losses: float = 0.0
    c_total: float = 0.0
    c_base: float = 0.0
    c_amod: float = 0.0
    c_charge: float = 0.0
    c_losses: float = 0.0
    rebalancing_cost: float = 0.0
    total_fleet_cost: float = 0.0
    fleet_operational_cost: float = 0.0

    def identities_hold(self, rel: float = 1e-9) -> bool:
        def close(a, b):
            return abs(a - b) <= rel * max(1.0, abs(a), abs(b))
        return (close(self.e_amod, self.e_charge + self.e_losses)
                and close(self.c_losses, self.c_amod - self.c_charge)
                and close(self.e_amod, self.e_total - self.e_base))


def _p_kw(pdn: Pdn, sol) -> float:
    return (sol.s0_total.real * (pdn.base_va if sol.per_unit else 1.0)) / 1e3


def energy_and_cost_accounting(pdns, base_solutions: dict, run_solutions: dict, charger_loads: dict,
                               prices: dict, step_hours: float, rebalancing_cost: float = 0.0
                               ) -> EnergyReport:
    """Substation energy and cost of a run relative to the base case.

    ``charger_loads`` maps network name to ``{slot: (n_t, phases) array}`` in the
    network's units; ``prices`` maps network name to a USD/kWh series.
    """
    r = EnergyReport()
    for pdn in pdns:
        base = sorted(base_solutions[pdn.name], key=lambda s: s.t)
        run = sorted(run_solutions[pdn.name], key=lambda s: s.t)
        if [s.t for s in base] != [s.t for s in run]:
            raise ValueError(f"base and run solutions of {pdn.name!r} cover different steps")
        price = np.asarray(prices[pdn.name], dtype=float)
        if price.shape[0] < len(run) or (run and run[-1].t >= price.shape[0]):
            raise ValueError(f"price series of {pdn.name!r} is shorter than the horizon")
        s_base = pdn.base_va if pdn.per_unit else 1.0
        charge_kw = np.zeros(pdn.n_t)
        for series in charger_loads.get(pdn.name, {}).values():
            charge_kw += np.asarray(series).real.sum(axis=1) * s_base / 1e3
        for sb, sr in zip(base, run):
            t = sr.t
            pb, pr = _p_kw(pdn, sb), _p_kw(pdn, sr)
            r.e_base += step_hours * pb
            r.e_total += step_hours * pr
            r.c_base += step_hours * price[t] * pb
            r.c_total += step_hours * price[t] * pr
            r.e_charge += step_hours * charge_kw[t]
            r.c_charge += step_hours * price[t] * charge_kw[t]
    r.e_amod = r.e_total - r.e_base
    r.e_losses = r.e_amod - r.e_charge
    r.c_amod = r.c_total - r.c_base
    r.c_losses = r.c_amod - r.c_charge
    r.rebalancing_cost = rebalancing_cost
    r.total_fleet_cost = rebalancing_cost + r.c_amod
    r.fleet_operational_cost = rebalancing_cost + r.c_charge
    return r


# -- report files ------------------------------------------------------------------

def report_schema() -> dict:
    with resources.files("amodgrid.data").joinpath("report_schema.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def histogram(values, bin_width: float, lo: float | None = None):
    """Fixed-width histogram: list of ``(left, right, count)`` covering all values."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        return []
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    lo = math.floor(values.min() / bin_width) * bin_width if lo is None else lo
    n = max(1, int(math.floor((values.max() - lo) / bin_width)) + 1)
    counts = np.zeros(n, dtype=int)
    for v in values:
        counts[min(n - 1, int(math.floor((v - lo) / bin_width + 1e-12)))] += 1
    return [(lo + k * bin_width, lo + (k + 1) * bin_width, int(c)) for k, c in enumerate(counts)]


def build_report(mode: str, scenario_name: str, viol: ViolationReport, energy: EnergyReport | None,
                 extra: dict | None = None) -> dict:
    rep = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": scenario_name,
        "mode": mode,
        "step_hours": viol.step_hours,
        "violations": {
            "du_viol_pu_h": viol.du_viol,
            "ds_viol_vah": viol.ds_viol,
            "voltage_events": viol.n_voltage_events,
            "serious_voltage_events": viol.n_serious_voltage_events,
            "serious_threshold_pu": viol.serious_threshold,
            "rating_events": viol.n_rating_events,
        },
        "energy": asdict(energy if energy is not None else EnergyReport()),
    }
    if extra:
        rep.update(extra)
    return rep


def _write_csv(path: Path, header, rows) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
            n += 1
    return n


def emit_report(report: dict, viol: ViolationReport, destination, du_bin: float = 0.005,
                ds_bin_va: float = 1e4, substation: list | None = None,
                charging: list | None = None) -> dict:
    """Write ``report.json`` and the CSV companions into ``destination``.

    ``substation`` rows are ``(pdn, t, p_kw, q_kvar, s_kva, rating_kva, base_p_kw)`` and
    ``charging`` rows ``(charger, pdn, t, vehicles, power_kw)``. Returns the file map.
    """
    import jsonschema

    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    jsonschema.validate(report, report_schema())
    files = {}
    with open(dest / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    files["report"] = "report.json"
    _write_csv(dest / "voltage_events.csv", ["pdn", "bus", "phase", "t", "u_pu", "du_pu"],
               [(e.pdn, e.bus, e.phase, e.t, repr(e.u), repr(e.du)) for e in viol.voltage_events])
    files["voltage_events"] = "voltage_events.csv"
    _write_csv(dest / "rating_events.csv", ["pdn", "t", "s_va", "rating_va", "ds_va"],
               [(e.pdn, e.t, repr(e.s_va), repr(e.rating_va), repr(e.ds_va)) for e in viol.rating_events])
    files["rating_events"] = "rating_events.csv"
    _write_csv(dest / "hist_du.csv", ["left_pu", "right_pu", "count"],
               histogram([e.du for e in viol.voltage_events], du_bin))
    files["hist_du"] = "hist_du.csv"
    _write_csv(dest / "hist_ds.csv", ["left_va", "right_va", "count"],
               histogram([e.ds_va for e in viol.rating_events], ds_bin_va, 0.0))
    files["hist_ds"] = "hist_ds.csv"
    if substation is not None:
        _write_csv(dest / "substation_load.csv",
                   ["pdn", "t", "p_kw", "q_kvar", "s_kva", "rating_kva", "base_p_kw"], substation)
        files["substation_load"] = "substation_load.csv"
    if charging is not None:
        _write_csv(dest / "charging.csv", ["charger", "pdn", "t", "vehicles", "power_kw"], charging)
        files["charging"] = "charging.csv"
    return files


def substation_rows(pdn: Pdn, solutions, base_solutions=None) -> list:
    rows = []
    s_base = pdn.base_va if pdn.per_unit else 1.0
    base = {s.t: s for s in base_solutions} if base_solutions else {}
    rating = _rating_va(pdn) / 1e3
    for sol in solutions:
        s = sol.s0_total * (s_base if sol.per_unit else 1.0) / 1e3
        bp = _p_kw(pdn, base[sol.t]) if sol.t in base else float("nan")
        rows.append((pdn.name, sol.t, f"{s.real:.6f}", f"{s.imag:.6f}", f"{abs(s):.6f}",
                     "inf" if math.isinf(rating) else f"{rating:.6f}", f"{bp:.6f}"))
    return rows
