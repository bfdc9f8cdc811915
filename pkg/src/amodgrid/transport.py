"""Road graph, time/charge expanded graph and customer route precomputation.

Time steps are numbered ``1..n_t`` and charge levels ``1..n_c``. A vehicle at
``(i, t, c)`` is at road vertex ``i`` at the start of step ``t`` with ``c``
charge units in its battery.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import RoutingError, ScenarioError


@dataclass(frozen=True)
class RoadArc:
    i: Hashable
    j: Hashable
    distance_km: float
    steps: int
    energy: int
    capacity: float = math.inf


@dataclass
class RoadGraph:
    vertices: tuple
    arcs: tuple

    def __post_init__(self):
        self.vertices = tuple(self.vertices)
        self.arcs = tuple(self.arcs)
        vs = set(self.vertices)
        if len(vs) != len(self.vertices):
            raise ScenarioError("duplicate road vertices")
        bad = []
        for k, a in enumerate(self.arcs):
            if a.i not in vs or a.j not in vs:
                bad.append(f"arc {k}: endpoint is not a declared vertex")
            if a.i == a.j:
                bad.append(f"arc {k}: self-loop")
            if not isinstance(a.steps, (int, np.integer)) or a.steps < 1:
                bad.append(f"arc {k}: traversal steps must be an integer >= 1")
            if not isinstance(a.energy, (int, np.integer)) or a.energy < 0:
                bad.append(f"arc {k}: energy levels must be an integer >= 0")
            if not a.capacity >= 0:
                bad.append(f"arc {k}: capacity must be nonnegative")
            if not a.distance_km >= 0:
                bad.append(f"arc {k}: distance must be nonnegative")
        if bad:
            raise ScenarioError("invalid road graph", bad)

    @classmethod
    def from_physical(cls, vertices, arcs, step_hours: float, unit_kwh: float) -> "RoadGraph":
        """Build from arcs given as ``(i, j, km, minutes, kwh[, capacity])``.

        Minutes round up to whole steps (at least one) and kWh round up to whole
        charge levels.
        """
        out = []
        for a in arcs:
            i, j, km, minutes, kwh = a[:5]
            cap = a[5] if len(a) > 5 else math.inf
            out.append(RoadArc(i, j, float(km), to_steps(minutes, step_hours),
                               to_levels(kwh, unit_kwh), float(cap)))
        return cls(vertices, out)

    def out_arcs(self) -> dict:
        out = {v: [] for v in self.vertices}
        for k, a in enumerate(self.arcs):
            out[a.i].append(k)
        return out


def _ceil(x: float) -> int:
    # tolerate representation noise such as 0.30000000000000004 / 0.1
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else math.ceil(x)


def to_steps(minutes: float, step_hours: float) -> int:
    return max(1, _ceil(minutes / (60.0 * step_hours)))


def to_levels(kwh: float, unit_kwh: float) -> int:
    return max(0, _ceil(kwh / unit_kwh))


@dataclass
class ChargerSpec:
    vertex: Hashable
    rate: int
    plugs: int
    price: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.price = np.asarray(self.price, dtype=float)


@dataclass(frozen=True)
class TripRequest:
    origin: Hashable
    destination: Hashable
    departure: int
    demand: float


@dataclass(frozen=True)
class ExpandedArc:
    src: tuple          # (i, t, c)
    dst: tuple          # (i', t', c')
    source: int         # index of the road arc or charger


def _key(x):
    # sort mixed vertex ids deterministically
    return (type(x).__name__, x)


def _arc_key(arc: ExpandedArc):
    (i, t, c), (j, u, d) = arc.src, arc.dst
    return (_key(i), t, c, _key(j), u, d, arc.source)


@dataclass
class ExpandedGraph:
    road: RoadGraph
    chargers: list
    n_t: int
    n_c: int
    step_hours: float
    unit_kwh: float
    road_arcs: list
    charge_arcs: list

    @property
    def vertices(self):
        return [(i, t, c) for i in self.road.vertices for t in range(1, self.n_t + 1)
                for c in range(1, self.n_c + 1)]

    @property
    def n_vertices(self) -> int:
        return len(self.road.vertices) * self.n_t * self.n_c

    def road_arc_realizable(self, e: int, t: int, c: int) -> bool:
        a = self.road.arcs[e]
        return 1 <= t and t + a.steps <= self.n_t and a.energy < c <= self.n_c

    def charge_arc_realizable(self, s: int, t: int, c: int) -> bool:
        r = self.chargers[s].rate
        return 1 <= t < self.n_t and 1 <= c and c + r <= self.n_c


def build_expanded_graph(road: RoadGraph, chargers: Sequence[ChargerSpec], n_t: int, n_c: int,
                         step_hours: float = 0.1, unit_kwh: float = 1.0) -> ExpandedGraph:
    """Enumerate every road and charge arc of the expanded graph.

    Charge arcs last one step: ``(s, t, c) -> (s, t + 1, c + rate)``.
    """
    if n_t < 1 or n_c < 1:
        raise ScenarioError("n_t and n_c must be at least 1")
    vs = set(road.vertices)
    problems = []
    for k, s in enumerate(chargers):
        if s.vertex not in vs:
            problems.append(f"charger {k}: vertex {s.vertex!r} is not a road vertex")
        if not (isinstance(s.rate, (int, np.integer)) and 1 <= s.rate <= n_c - 1):
            problems.append(f"charger {k}: rate {s.rate} must be an integer in 1..{n_c - 1}")
        if not (isinstance(s.plugs, (int, np.integer)) and s.plugs >= 1):
            problems.append(f"charger {k}: plugs must be a positive integer")
        if s.price.shape != (n_t,):
            problems.append(f"charger {k}: price series has length {s.price.size}, expected {n_t}")
    for k, a in enumerate(road.arcs):
        if a.energy >= n_c:
            problems.append(f"road arc {k}: energy {a.energy} levels needs n_c > {a.energy}")
    if problems:
        raise ScenarioError("cannot build expanded graph", problems)

    road_arcs = []
    for e, a in enumerate(road.arcs):
        for t in range(1, n_t - a.steps + 1):
            for c in range(a.energy + 1, n_c + 1):
                road_arcs.append(ExpandedArc((a.i, t, c), (a.j, t + a.steps, c - a.energy), e))
    charge_arcs = []
    for k, s in enumerate(chargers):
        for t in range(1, n_t):
            for c in range(1, n_c - s.rate + 1):
                charge_arcs.append(ExpandedArc((s.vertex, t, c), (s.vertex, t + 1, c + s.rate), k))
    road_arcs.sort(key=_arc_key)
    charge_arcs.sort(key=_arc_key)
    return ExpandedGraph(road, list(chargers), n_t, n_c, step_hours, unit_kwh, road_arcs,
                         charge_arcs)


# -- customer routes -----------------------------------------------------------------

@dataclass(frozen=True)
class Route:
    """One routed share of a trip request (a trip may be split over several paths)."""

    trip: int
    path: tuple          # road vertices
    arcs: tuple          # road arc indices
    departure: int
    tau: int             # traversal steps
    gamma: int           # charge levels used
    demand: float
    origin: Hashable
    destination: Hashable


@dataclass
class RoutePlan:
    routes: list
    residual: np.ndarray          # (|arcs|, n_t): residual capacity at entry step t (1-based -> t-1)
    customer_flow: np.ndarray     # same shape
    n_t: int

    @property
    def n_m(self) -> int:
        return len(self.routes)

    def residual_capacity(self, e: int, t: int) -> float:
        return float(self.residual[e, t - 1])

    def routes_of(self, trip: int) -> list:
        return [r for r in self.routes if r.trip == trip]


def _shortest(road: RoadGraph, out_arcs, residual, origin, dest, t0, n_t, n_c):
    """Earliest-arrival path with positive residual capacity on every (arc, entry step).

    Ties break on energy, then on the vertex sequence.
    """
    start = (0, 0, (_key(origin),), (origin,), ())
    heap = [start]
    best = {}
    while heap:
        el, en, keyp, path, arcs = heapq.heappop(heap)
        v = path[-1]
        t = t0 + el
        if (v, t) in best:
            continue
        best[(v, t)] = True
        if v == dest:
            return path, arcs, el, en
        for e in out_arcs[v]:
            a = road.arcs[e]
            if t + a.steps > n_t or residual[e, t - 1] <= 1e-12:
                continue
            if en + a.energy >= n_c or a.j in path:
                continue
            heapq.heappush(heap, (el + a.steps, en + a.energy, keyp + (_key(a.j),),
                                  path + (a.j,), arcs + (e,)))
    return None


def precompute_customer_routes(road: RoadGraph, trips: Sequence[TripRequest], n_t: int,
                               n_c: int | None = None) -> RoutePlan:
    """Route trips one by one in input order along shortest-time paths.

    Demand that exceeds the bottleneck capacity of the best path spills onto
    the next-best path; each used path becomes its own :class:`Route`.
    Raises :class:`RoutingError` listing every trip that cannot be served.
    """
    n_c = math.inf if n_c is None else n_c
    cap = np.array([[a.capacity] * n_t for a in road.arcs], dtype=float).reshape(len(road.arcs), n_t)
    flow = np.zeros_like(cap)
    out_arcs = road.out_arcs()
    vs = set(road.vertices)
    routes, problems = [], []
    for m, trip in enumerate(trips):
        where = f"trip {m}"
        if trip.origin not in vs or trip.destination not in vs:
            problems.append(f"{where}: unknown vertex")
            continue
        if trip.origin == trip.destination:
            problems.append(f"{where}: origin equals destination")
            continue
        if not 1 <= trip.departure <= n_t:
            problems.append(f"{where}: departure {trip.departure} outside 1..{n_t}")
            continue
        if not trip.demand >= 0:
            problems.append(f"{where}: negative demand")
            continue
        remaining = float(trip.demand)
        first = True
        while first or remaining > 1e-9:
            first = False
            residual = np.maximum(cap - flow, 0.0)
            found = _shortest(road, out_arcs, residual, trip.origin, trip.destination,
                              trip.departure, n_t, n_c)
            if found is None:
                if remaining < trip.demand:
                    problems.append(f"{where}: {remaining:g} of {trip.demand:g} vehicles exceed "
                                    "the road capacity")
                else:
                    problems.append(f"{where}: no path from {trip.origin!r} to {trip.destination!r} "
                                    f"arrives within the horizon")
                break
            path, arcs, tau, gamma = found
            t = trip.departure
            bottleneck = math.inf
            for e in arcs:
                bottleneck = min(bottleneck, residual[e, t - 1])
                t += road.arcs[e].steps
            share = min(remaining, bottleneck)
            t = trip.departure
            for e in arcs:
                flow[e, t - 1] += share
                t += road.arcs[e].steps
            routes.append(Route(m, path, arcs, trip.departure, tau, gamma, share,
                                trip.origin, trip.destination))
            remaining -= share
    if problems:
        raise RoutingError("customer trips cannot be routed", problems)
    return RoutePlan(routes, np.maximum(cap - flow, 0.0), flow, n_t)


# -- model size ----------------------------------------------------------------------

@dataclass
class VariableCounts:
    eamod: int
    pdn: dict = field(default_factory=dict)

    @property
    def mopf(self) -> int:
        return sum(self.pdn.values())

    @property
    def total(self) -> int:
        return self.eamod + self.mopf

    def as_dict(self) -> dict:
        return {"eamod": self.eamod, "pdn": dict(self.pdn), "mopf": self.mopf, "total": self.total}


def eamod_variable_count(n_t: int, n_c: int, n_arcs: int, n_chargers: int, n_m: int,
                         n_vertices: int) -> int:
    return n_t * n_c * (n_arcs + n_chargers) + n_c * n_m + n_t * n_c * n_vertices + n_c * n_vertices


def model_statistics(expanded: ExpandedGraph | None, routes=None, pdns=()) -> VariableCounts:
    """Variable counts from the closed-form size formulas.

    ``routes`` is a :class:`RoutePlan` or the number of routed trips.
    """
    from .powerflow.bfm import bfm_variable_count

    if expanded is None:
        eamod = 0
    else:
        n_m = routes.n_m if isinstance(routes, RoutePlan) else int(routes or 0)
        eamod = eamod_variable_count(expanded.n_t, expanded.n_c, len(expanded.road.arcs),
                                     len(expanded.chargers), n_m, len(expanded.road.vertices))
    return VariableCounts(eamod, {p.name: bfm_variable_count(p) for p in pdns})
