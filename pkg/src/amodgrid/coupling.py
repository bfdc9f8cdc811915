"""Charger-to-feeder coupling and assembly of the fleet-only and joint LPs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eamod import charge_var, emit_eamod_constraints, emit_eamod_objective
from .errors import ScenarioError
from .lp.model import EQ, LpModel
from .pdn import Pdn, as_per_unit, nominal_linearization
from .powerflow.bfm import emit_bfm_lp, s0_name, slot_name
from .transport import ExpandedGraph, RoutePlan, build_expanded_graph, precompute_customer_routes


@dataclass(frozen=True)
class CouplingEntry:
    charger: int
    pdn: str
    slot: str


@dataclass
class CouplingMap:
    entries: list

    def __post_init__(self):
        seen_c, seen_s = set(), set()
        for e in self.entries:
            if e.charger in seen_c:
                raise ScenarioError(f"charger {e.charger} is mapped more than once")
            if (e.pdn, e.slot) in seen_s:
                raise ScenarioError(f"slot {e.slot!r} of {e.pdn!r} serves more than one charger")
            seen_c.add(e.charger)
            seen_s.add((e.pdn, e.slot))

    def of(self, charger: int) -> CouplingEntry | None:
        for e in self.entries:
            if e.charger == charger:
                return e
        return None

    def by_pdn(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out.setdefault(e.pdn, []).append(e)
        return out

    def check(self, n_chargers: int, pdns) -> list[str]:
        out = []
        nets = {p.name: p for p in pdns}
        mapped = {e.charger for e in self.entries}
        for k in range(n_chargers):
            if k not in mapped:
                out.append(f"charger {k} is not attached to any network")
        for e in self.entries:
            if not 0 <= e.charger < n_chargers:
                out.append(f"coupling names unknown charger {e.charger}")
                continue
            if e.pdn not in nets:
                out.append(f"charger {e.charger}: unknown network {e.pdn!r}")
                continue
            try:
                slot = nets[e.pdn].slot(e.slot)
            except KeyError:
                out.append(f"charger {e.charger}: network {e.pdn!r} has no slot {e.slot!r}")
                continue
            if len(nets[e.pdn].bus(slot.bus).phases) != 3:
                out.append(f"charger {e.charger}: bus {slot.bus!r} of {e.pdn!r} does not carry "
                           "all three phases")
        return out


def charger_power_factor(expanded: ExpandedGraph, charger: int, pdn: Pdn) -> float:
    """Per-phase p.u. power drawn per vehicle charging at ``charger``.

    One vehicle adds ``rate * unit_kwh`` kWh over one step of ``step_hours``,
    i.e. ``rate * unit_kwh / step_hours`` kW, split equally over three phases.
    """
    ch = expanded.chargers[charger]
    kw = ch.rate * expanded.unit_kwh / expanded.step_hours
    return kw / 3.0 / (pdn.base_va / 1e3)


def emit_coupling_constraints(expanded: ExpandedGraph, chargers, coupling: CouplingMap,
                              pdns) -> LpModel:
    """Tie each charger's slot to the charge arcs leaving during each step.

    Grid step ``k`` (0-based) carries the charge arcs that start at fleet step
    ``k + 1``; the last step carries none. Reactive power is fixed at zero.
    """
    nets = {p.name: as_per_unit(p) for p in pdns}
    problems = coupling.check(len(expanded.chargers), nets.values())
    if problems:
        raise ScenarioError("invalid charger coupling", problems)
    lp = LpModel("coupling")
    n_t, n_c = expanded.n_t, expanded.n_c
    for e in coupling.entries:
        pdn = nets[e.pdn]
        ch = expanded.chargers[e.charger]
        k = charger_power_factor(expanded, e.charger, pdn)
        for t in range(1, n_t + 1):
            flows = {}
            if t < n_t:
                flows = {charge_var(e.charger, t, c): -k for c in range(1, n_c - ch.rate + 1)}
            for p in pdn.bus(pdn.slot(e.slot).bus).phases:
                terms = {slot_name(pdn.name, e.slot, t - 1, p, "re"): 1.0, **flows}
                lp.add_constraint(f"cpl:{e.charger}:{t}:{p}:p", terms, EQ, 0.0)
                lp.add_constraint(f"cpl:{e.charger}:{t}:{p}:q",
                                  {slot_name(pdn.name, e.slot, t - 1, p, "im"): 1.0}, EQ, 0.0)
    return lp


def charger_loads(expanded: ExpandedGraph, values, coupling: CouplingMap, pdns) -> dict:
    """Per-network, per-slot ``(n_t, 3)`` p.u. series implied by the charge-arc flows."""
    nets = {p.name: as_per_unit(p) for p in pdns}
    out = {name: {} for name in nets}
    for e in coupling.entries:
        pdn = nets[e.pdn]
        ch = expanded.chargers[e.charger]
        k = charger_power_factor(expanded, e.charger, pdn)
        series = np.zeros((pdn.n_t, 3), dtype=complex)
        for t in range(1, expanded.n_t):
            occ = sum(values.get(charge_var(e.charger, t, c), 0.0)
                      for c in range(1, expanded.n_c - ch.rate + 1))
            series[t - 1, :] = k * occ
        out[e.pdn][e.slot] = series
    return out


# -- assembly -------------------------------------------------------------------------

@dataclass
class FleetProblem:
    """Pieces shared by both assemblies."""

    expanded: ExpandedGraph
    routes: RoutePlan
    eamod: LpModel
    objective: dict


def build_fleet(scenario) -> FleetProblem:
    s = scenario
    expanded = build_expanded_graph(s.road, s.chargers, s.n_t, s.n_c, s.step_hours, s.unit_kwh)
    routes = precompute_customer_routes(s.road, s.trips, s.n_t, s.n_c)
    eamod = emit_eamod_constraints(expanded, s.trips, routes, s.boundary)
    return FleetProblem(expanded, routes, eamod, {})


def assemble_uncoordinated(scenario, fleet: FleetProblem | None = None):
    """Fleet LP alone, charging priced at each charger's energy price.

    Returns ``(model, post_solve_loads)`` where ``post_solve_loads(values)`` maps
    a solution to the per-network slot series for exact validation.
    """
    fleet = fleet or build_fleet(scenario)
    model = LpModel("uncoordinated")
    model.absorb(fleet.eamod)
    model.add_objective(emit_eamod_objective(fleet.expanded, scenario.chargers,
                                             scenario.distance_price, include_charging=True))
    model.meta.update(mode="uncoordinated", n_m=fleet.routes.n_m)

    def post_solve_loads(values):
        return charger_loads(fleet.expanded, values, scenario.coupling, scenario.pdns)

    return model, post_solve_loads, fleet


@dataclass
class JointProblem:
    model: LpModel
    fleet: FleetProblem
    params: dict                       # pdn name -> FixedLinearizationParams
    roles: dict = field(default_factory=dict)

    def role_of(self, name: str) -> str:
        for prefix, role in self.roles.items():
            if name.startswith(prefix):
                return role
        return "fleet"


def substation_cost_terms(pdn: Pdn, price, step_hours: float, steps=None) -> dict:
    """``step_hours * price[t] * base_kW * sum_phase Re s0`` per step, as LP terms."""
    pdn = as_per_unit(pdn)
    steps = range(pdn.n_t) if steps is None else steps
    base_kw = pdn.base_va / 1e3
    terms = {}
    for t in steps:
        for p in pdn.bus(pdn.reference).phases:
            coef = step_hours * float(price[t]) * base_kw
            if coef:
                terms[s0_name(pdn.name, t, p, "re")] = coef
    return terms


def assemble_coordinated(scenario, params: dict | None = None, relax: bool = False,
                         fleet: FleetProblem | None = None) -> JointProblem:
    """Fleet LP plus one BFM-LP per network plus coupling rows, with the joint objective.

    ``params`` maps network name to linearization parameters (nominal if
    missing). ``relax=True`` drops ratings, voltage limits and slot bounds.
    """
    fleet = fleet or build_fleet(scenario)
    params = dict(params or {})
    model = LpModel("coordinated")
    model.absorb(fleet.eamod)
    model.add_objective(emit_eamod_objective(fleet.expanded, scenario.chargers,
                                             scenario.distance_price, include_charging=False))
    roles = {}
    for pdn in scenario.pdns:
        pu = as_per_unit(pdn)
        if relax:
            pu = _relaxed(pu)
        par = params.get(pdn.name) or nominal_linearization(pu)
        params[pdn.name] = par
        frag = emit_bfm_lp(pu, par, rating=not relax, voltage_limits=not relax)
        model.absorb(frag)
        model.add_objective(substation_cost_terms(pu, scenario.pdn_price[pdn.name], scenario.step_hours))
        roles[f"{pdn.name}:"] = f"pdn:{pdn.name}"
    model.absorb(emit_coupling_constraints(fleet.expanded, scenario.chargers, scenario.coupling,
                                           scenario.pdns))
    roles["cpl:"] = "coupling"
    model.meta.update(mode="coordinated", n_m=fleet.routes.n_m, relaxed=relax)
    return JointProblem(model, fleet, params, roles)


def _relaxed(pdn: Pdn) -> Pdn:
    from dataclasses import replace
    from .pdn import ControllableSlot
    slots = [ControllableSlot(s.id, s.bus, np.full_like(s.p_min, -math.inf),
                              np.full_like(s.p_max, math.inf), np.full_like(s.q_min, -math.inf),
                              np.full_like(s.q_max, math.inf)) for s in pdn.slots]
    return replace(pdn, rating=math.inf, slots=slots)


def fleet_operational_cost(expanded: ExpandedGraph, values, chargers, distance_price) -> float:
    """Rebalancing distance cost plus energy-priced charging cost of a fleet solution."""
    terms = emit_eamod_objective(expanded, chargers, distance_price, include_charging=True)
    return float(sum(coef * values.get(v, 0.0) for v, coef in terms.items()))
