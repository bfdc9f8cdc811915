"""Fleet linear program on the expanded graph.

Flow variables are laid out densely: one road slot per (road arc, t, c) and
one charge slot per (charger, t, c). Slots that do not correspond to an arc
of the expanded graph (the move would leave the horizon or the battery
range) are fixed to zero. Vehicles that neither move nor charge follow a
hold arc ``(i, t, c) -> (i, t + 1, c)``; at ``t = n_t`` they leave through the
final-distribution sink ``dF`` and at ``t = 1`` they enter from the initial
distribution ``dI``.

Customer-carrying vehicles are not flow variables: a trip's vehicles leave
their origin with charge ``c`` (``lam:m:c``) and reappear at the destination
``tau`` steps later with ``c - gamma`` charge.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, ScenarioError
from .lp.model import EQ, GE, LE, LpModel
from .transport import ExpandedGraph, RoutePlan


# -- names ------------------------------------------------------------------

def road_var(e, t, c) -> str:
    return f"f:r:{e}:{t}:{c}"


def charge_var(s, t, c) -> str:
    return f"f:c:{s}:{t}:{c}"


def hold_var(i, t, c) -> str:
    return f"hold:{i}:{t}:{c}"


def final_var(i, c) -> str:
    return f"dF:{i}:{c}"


def initial_var(i, c) -> str:
    return f"dI:{i}:{c}"


def lam_var(m, c) -> str:
    return f"lam:{m}:{c}"


def balance_row(i, t, c) -> str:
    return f"bal:{i}:{t}:{c}"


# -- boundary conditions ------------------------------------------------------------

@dataclass
class FleetBoundary:
    """Initial distribution and final requirement.

    ``initial`` maps ``(vertex, level)`` to a vehicle count. The final state is
    either ``final_fixed`` (exact distribution) or the default aggregate rule:
    average final charge at least ``min_soc_fraction * n_c`` levels, plus
    optional per-(vertex, level) lower bounds ``final_lower``.
    """

    initial: dict
    final_fixed: dict | None = None
    final_lower: dict = field(default_factory=dict)
    min_soc_fraction: float = 0.5

    @property
    def fleet_size(self) -> float:
        return float(sum(self.initial.values()))

    def check(self, expanded: ExpandedGraph) -> list[str]:
        out = []
        vs = set(expanded.road.vertices)
        for name, dist in (("initial", self.initial), ("final", self.final_fixed or {}),
                           ("final lower bound", self.final_lower)):
            for (i, c), n in dist.items():
                if i not in vs:
                    out.append(f"{name}: unknown vertex {i!r}")
                if not (isinstance(c, (int, np.integer)) and 1 <= c <= expanded.n_c):
                    out.append(f"{name}: charge level {c!r} outside 1..{expanded.n_c}")
                if not n >= 0:
                    out.append(f"{name}: negative vehicle count at {(i, c)!r}")
        fleet = self.fleet_size
        if self.final_fixed is not None and not math.isclose(sum(self.final_fixed.values()), fleet,
                                                             rel_tol=1e-9, abs_tol=1e-9):
            out.append("final distribution total differs from the fleet size")
        if sum(self.final_lower.values()) > fleet * (1 + 1e-9) + 1e-9:
            out.append("final lower bounds exceed the fleet size")
        if not 0 <= self.min_soc_fraction <= 1:
            out.append("min_soc_fraction must lie in [0, 1]")
        return out


def charging_precheck(expanded: ExpandedGraph, boundary: FleetBoundary) -> list[str]:
    """Advisory: can the chargers deliver the net charge the final condition asks for?"""
    if boundary.final_fixed is not None:
        need = sum(c * n for (_, c), n in boundary.final_fixed.items())
    else:
        need = boundary.min_soc_fraction * expanded.n_c * boundary.fleet_size
    have = sum(c * n for (_, c), n in boundary.initial.items())
    supply = sum(s.rate * s.plugs * (expanded.n_t - 1) for s in expanded.chargers)
    if need - have > supply + 1e-9:
        return [f"final condition needs {need - have:g} more charge levels than the chargers "
                f"can deliver over the horizon ({supply:g})"]
    return []


# -- emission ---------------------------------------------------------------------------

def emit_eamod_constraints(expanded: ExpandedGraph, trips, routes: RoutePlan,
                           boundary: FleetBoundary) -> LpModel:
    """Variables and rows of the fleet problem (objective coefficients left at zero)."""
    problems = boundary.check(expanded)
    if problems:
        raise ScenarioError("invalid fleet boundary", problems)
    g = expanded
    n_t, n_c = g.n_t, g.n_c
    V = g.road.vertices
    lp = LpModel("eamod")
    lp.meta["n_m"] = routes.n_m

    for e in range(len(g.road.arcs)):
        for t in range(1, n_t + 1):
            for c in range(1, n_c + 1):
                lp.add_variable(road_var(e, t, c), 0.0, math.inf if g.road_arc_realizable(e, t, c) else 0.0)
    for s in range(len(g.chargers)):
        for t in range(1, n_t + 1):
            for c in range(1, n_c + 1):
                lp.add_variable(charge_var(s, t, c), 0.0,
                                math.inf if g.charge_arc_realizable(s, t, c) else 0.0)
    for m in range(routes.n_m):
        for c in range(1, n_c + 1):
            lp.add_variable(lam_var(m, c))
    fixed = boundary.final_fixed
    for i in V:
        for c in range(1, n_c + 1):
            for t in range(1, n_t):
                lp.add_variable(hold_var(i, t, c))
            if fixed is not None:
                n = fixed.get((i, c), 0.0)
                lp.add_variable(final_var(i, c), n, n)
            else:
                lp.add_variable(final_var(i, c), boundary.final_lower.get((i, c), 0.0))
    for i in V:
        for c in range(1, n_c + 1):
            n = boundary.initial.get((i, c), 0.0)
            lp.add_variable(initial_var(i, c), n, n)

    # flow conservation at every expanded vertex
    rows: dict = {}

    def term(i, t, c, var, coef):
        rows.setdefault((i, t, c), {})
        d = rows[(i, t, c)]
        d[var] = d.get(var, 0.0) + coef

    for arc in g.road_arcs:
        (i, t, c), (j, u, d) = arc.src, arc.dst
        var = road_var(arc.source, t, c)
        term(i, t, c, var, 1.0)
        term(j, u, d, var, -1.0)
    for arc in g.charge_arcs:
        (i, t, c), (j, u, d) = arc.src, arc.dst
        var = charge_var(arc.source, t, c)
        term(i, t, c, var, 1.0)
        term(j, u, d, var, -1.0)
    for i in V:
        for c in range(1, n_c + 1):
            for t in range(1, n_t):
                term(i, t, c, hold_var(i, t, c), 1.0)
                term(i, t + 1, c, hold_var(i, t, c), -1.0)
            term(i, n_t, c, final_var(i, c), 1.0)
            term(i, 1, c, initial_var(i, c), -1.0)
    for m, r in enumerate(routes.routes):
        arrive = r.departure + r.tau
        for c in range(1, n_c + 1):
            term(r.origin, r.departure, c, lam_var(m, c), 1.0)
            if c > r.gamma:
                term(r.destination, arrive, c - r.gamma, lam_var(m, c), -1.0)
    for i in V:
        for t in range(1, n_t + 1):
            for c in range(1, n_c + 1):
                lp.add_constraint(balance_row(i, t, c), rows.get((i, t, c), {}), EQ, 0.0)

    # trip demand: all leave, and all arrive with nonnegative charge
    for m, r in enumerate(routes.routes):
        lp.add_constraint(f"dem:in:{m}", {lam_var(m, c): 1.0 for c in range(1, n_c + 1)}, EQ, r.demand)
        lp.add_constraint(f"dem:out:{m}", {lam_var(m, c): 1.0 for c in range(r.gamma + 1, n_c + 1)},
                          EQ, r.demand)

    # residual road capacity and charger plugs
    for e, a in enumerate(g.road.arcs):
        for t in range(1, n_t - a.steps + 1):
            cap = routes.residual_capacity(e, t)
            if math.isfinite(cap):
                lp.add_constraint(f"cap:r:{e}:{t}",
                                  {road_var(e, t, c): 1.0 for c in range(a.energy + 1, n_c + 1)},
                                  LE, cap)
    for s, ch in enumerate(g.chargers):
        for t in range(1, n_t):
            lp.add_constraint(f"cap:c:{s}:{t}",
                              {charge_var(s, t, c): 1.0 for c in range(1, n_c - ch.rate + 1)},
                              LE, float(ch.plugs))

    # final condition
    fleet = boundary.fleet_size
    lp.add_constraint("final:fleet", {final_var(i, c): 1.0 for i in V for c in range(1, n_c + 1)},
                      EQ, fleet)
    if fixed is None and boundary.min_soc_fraction > 0:
        lp.add_constraint("final:soc", {final_var(i, c): float(c) for i in V for c in range(1, n_c + 1)},
                          GE, boundary.min_soc_fraction * n_c * fleet)
    return lp


def emit_eamod_objective(expanded: ExpandedGraph, chargers=None, distance_price: float = 0.0,
                         include_charging: bool = True) -> dict:
    """Objective terms: distance cost of rebalancing plus energy cost of charging.

    Charging at charger ``s`` during step ``t`` costs ``price_s[t] * rate_s * unit_kwh``
    per vehicle.
    """
    g = expanded
    chargers = g.chargers if chargers is None else chargers
    terms = {}
    if distance_price:
        for arc in g.road_arcs:
            d = g.road.arcs[arc.source].distance_km
            if d:
                terms[road_var(arc.source, arc.src[1], arc.src[2])] = distance_price * d
    if include_charging:
        for arc in g.charge_arcs:
            ch = chargers[arc.source]
            t = arc.src[1]
            cost = ch.price[t - 1] * ch.rate * g.unit_kwh
            if cost:
                terms[charge_var(arc.source, t, arc.src[2])] = cost
    return terms


# -- solution read-back --------------------------------------------------------------

@dataclass
class FleetSchedule:
    road_flow: dict                  # (e, t, c) -> vehicles
    charge_flow: dict                # (s, t, c) -> vehicles
    hold: dict                       # (i, t, c) -> vehicles
    final: dict                      # (i, c) -> vehicles
    occupancy: np.ndarray            # (|S|, n_t): vehicles charging during step t (1-based -> t-1)
    energy_kwh: np.ndarray           # (|S|, n_t): energy delivered into batteries during step t
    served: list                     # per route: vehicles served
    departures: list                 # per route: charge-level profile of lam_in
    rebalancing_km: float
    rebalancing_cost: float
    charging_cost: float
    max_residual: float
    n_t: int

    def to_csv(self, path, expanded: ExpandedGraph) -> int:
        """Write ``kind, arc, t, c, flow`` for every nonzero flow; returns row count."""
        rows = 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "arc", "from", "to", "t", "c", "flow"])
            for (e, t, c), f in sorted(self.road_flow.items()):
                a = expanded.road.arcs[e]
                w.writerow(["road", e, a.i, a.j, t, c, repr(f)])
                rows += 1
            for (s, t, c), f in sorted(self.charge_flow.items()):
                v = expanded.chargers[s].vertex
                w.writerow(["charge", s, v, v, t, c, repr(f)])
                rows += 1
        return rows


def extract_fleet_solution(expanded: ExpandedGraph, solution, routes: RoutePlan | None = None,
                           distance_price: float = 0.0, tol: float = 1e-6,
                           model: LpModel | None = None) -> FleetSchedule:
    """Read flows, occupancy and energy from a solved fleet LP and re-check conservation.

    Raises :class:`FeasibilityError` when any balance or demand row misses by more
    than ``tol * max(1, fleet size)``.
    """
    values = solution if isinstance(solution, dict) else solution.values
    if values is None:
        raise FeasibilityError("solution carries no values")
    g = expanded
    eps = 1e-12
    road = {}
    for arc in g.road_arcs:
        key = (arc.source, arc.src[1], arc.src[2])
        f = values.get(road_var(*key), 0.0)
        if abs(f) > eps:
            road[key] = f
    charge = {}
    occ = np.zeros((len(g.chargers), g.n_t))
    for arc in g.charge_arcs:
        key = (arc.source, arc.src[1], arc.src[2])
        f = values.get(charge_var(*key), 0.0)
        if abs(f) > eps:
            charge[key] = f
        occ[arc.source, arc.src[1] - 1] += f
    rates = np.array([ch.rate for ch in g.chargers], dtype=float).reshape(-1, 1)
    energy = occ * rates * g.unit_kwh
    hold = {}
    final = {}
    fleet = 0.0
    for i in g.road.vertices:
        for c in range(1, g.n_c + 1):
            fleet += values.get(initial_var(i, c), 0.0)
            f = values.get(final_var(i, c), 0.0)
            if abs(f) > eps:
                final[(i, c)] = f
            for t in range(1, g.n_t):
                h = values.get(hold_var(i, t, c), 0.0)
                if abs(h) > eps:
                    hold[(i, t, c)] = h
    km = sum(g.road.arcs[e].distance_km * f for (e, _, _), f in road.items())
    ch_cost = sum(g.chargers[s].price[t - 1] * g.chargers[s].rate * g.unit_kwh * f
                  for (s, t, _), f in charge.items())
    served, deps = [], []
    n_m = routes.n_m if routes is not None else 0
    for m in range(n_m):
        prof = [values.get(lam_var(m, c), 0.0) for c in range(1, g.n_c + 1)]
        deps.append(prof)
        served.append(float(sum(prof)))

    # conservation re-check
    worst = 0.0
    if model is not None:
        for name, con in model.constraints.items():
            if not (name.startswith("bal:") or name.startswith("dem:")):
                continue
            lhs = sum(coef * values.get(v, 0.0) for v, coef in con.terms.items())
            worst = max(worst, abs(lhs - con.rhs))
    else:
        worst = _balance_residual(g, values, routes)
    limit = tol * max(1.0, fleet)
    if worst > limit:
        raise FeasibilityError(f"fleet conservation residual {worst:.3g} exceeds {limit:.3g}")
    return FleetSchedule(road, charge, hold, final, occ, energy, served, deps, km,
                         distance_price * km, ch_cost, worst, g.n_t)


def _balance_residual(g: ExpandedGraph, values, routes) -> float:
    net: dict = {}

    def add(key, x):
        net[key] = net.get(key, 0.0) + x

    for arc in g.road_arcs:
        f = values.get(road_var(arc.source, arc.src[1], arc.src[2]), 0.0)
        add(arc.src, f)
        add(arc.dst, -f)
    for arc in g.charge_arcs:
        f = values.get(charge_var(arc.source, arc.src[1], arc.src[2]), 0.0)
        add(arc.src, f)
        add(arc.dst, -f)
    for i in g.road.vertices:
        for c in range(1, g.n_c + 1):
            for t in range(1, g.n_t):
                h = values.get(hold_var(i, t, c), 0.0)
                add((i, t, c), h)
                add((i, t + 1, c), -h)
            add((i, g.n_t, c), values.get(final_var(i, c), 0.0))
            add((i, 1, c), -values.get(initial_var(i, c), 0.0))
    worst = 0.0
    if routes is not None:
        for m, r in enumerate(routes.routes):
            tot = out = 0.0
            for c in range(1, g.n_c + 1):
                lam = values.get(lam_var(m, c), 0.0)
                tot += lam
                add((r.origin, r.departure, c), lam)
                if c > r.gamma:
                    out += lam
                    add((r.destination, r.departure + r.tau, c - r.gamma), -lam)
            worst = max(worst, abs(tot - r.demand), abs(out - r.demand))
    return max([worst] + [abs(x) for x in net.values()])
