"""Scenario documents: schema check, cross-reference check and construction.

A scenario is a single JSON document (see ``data/scenario_schema.json`` and
the README). Problems are reported as findings carrying a JSON pointer to
the offending value.
"""
from __future__ import annotations

import copy
import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .coupling import CouplingEntry, CouplingMap
from .eamod import FleetBoundary
from .errors import ScenarioError
from .pdn import ControllableSlot, Pdn, pdn_from_dict, validate_network
from .transport import (ChargerSpec, RoadArc, RoadGraph, TripRequest, model_statistics, to_levels,
                        to_steps)

DEFAULT_STEP_HOURS = 0.1
DEFAULT_SOC = 0.5


@dataclass(frozen=True)
class Finding:
    pointer: str
    message: str

    def __str__(self):
        return f"{self.pointer or '/'}: {self.message}"


@dataclass
class Diagnostics:
    findings: list = field(default_factory=list)
    statistics: dict | None = None

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, pointer, message):
        self.findings.append(Finding(pointer, message))


@dataclass
class Scenario:
    name: str
    n_t: int
    n_c: int
    step_hours: float
    unit_kwh: float
    distance_price: float
    road: RoadGraph
    chargers: list
    trips: list
    boundary: FleetBoundary
    pdns: list
    pdn_price: dict
    coupling: CouplingMap
    solver: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    seed: int = 0
    source: dict = field(default_factory=dict)

    def pdn(self, name) -> Pdn:
        for p in self.pdns:
            if p.name == name:
                return p
        raise KeyError(name)


def scenario_schema() -> dict:
    with resources.files("amodgrid.data").joinpath("scenario_schema.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def read_document(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})", [Finding("", str(exc))]) from None
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None


def assign_chargers(doc: dict, seed: int | None = None) -> dict:
    """Fill in a random three-phase PQ bus for every charger whose ``bus`` is null.

    The draw is reproducible for a given seed. Returns a new document.
    """
    doc = copy.deepcopy(doc)
    rng = random.Random(doc.get("seed", 0) if seed is None else seed)
    nets = {p["id"]: p for p in doc.get("pdns", [])}
    taken = {(c["pdn"], c["bus"]) for c in doc.get("chargers", []) if c.get("bus") is not None}
    for c in doc.get("chargers", []):
        if c.get("bus") is not None:
            continue
        net = nets.get(c.get("pdn"))
        if net is None:
            continue
        ref = net.get("reference", {}).get("bus", net["buses"][0]["id"])
        cands = [b["id"] for b in net["buses"] if b["id"] != ref
                 and len(b.get("phases", "abc")) == 3 and (c["pdn"], b["id"]) not in taken]
        if cands:
            c["bus"] = rng.choice(cands)
            taken.add((c["pdn"], c["bus"]))
    return doc


def validate_document(doc: dict) -> Diagnostics:
    """Schema and cross-reference checks; never raises for bad content."""
    diag = Diagnostics()
    validator = jsonschema.Draft202012Validator(scenario_schema())
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        diag.add(_pointer(err.absolute_path), err.message)
    if not diag.ok:
        return diag

    hz = doc["horizon"]
    n_t, n_c = hz["n_t"], hz["n_c"]
    unit_kwh = hz.get("unit_kwh", 1.0)
    vertices = doc["road"]["vertices"]
    vset = set(vertices)
    if len(vset) != len(vertices) or len({str(v) for v in vertices}) != len(vertices):
        diag.add("/road/vertices", "vertex ids must be unique (also as text)")
    for k, a in enumerate(doc["road"]["arcs"]):
        p = f"/road/arcs/{k}"
        for end in ("from", "to"):
            if a[end] not in vset:
                diag.add(f"{p}/{end}", f"unknown vertex {a[end]!r}")
        if a["from"] == a["to"]:
            diag.add(p, "self-loop road arc")
        levels = a["energy_levels"] if "energy_levels" in a else to_levels(a.get("kwh", 0.0), unit_kwh)
        if levels >= n_c:
            diag.add(p, f"arc uses {levels} charge levels; n_c = {n_c} leaves no usable charge")

    nets = {}
    for k, net in enumerate(doc["pdns"]):
        p = f"/pdns/{k}"
        if net["id"] in nets:
            diag.add(f"{p}/id", f"duplicate network id {net['id']!r}")
        nets[net["id"]] = (k, net)
        if len(net["price_per_kwh"]) != n_t:
            diag.add(f"{p}/price_per_kwh", f"price series has {len(net['price_per_kwh'])} entries, "
                                            f"expected n_t = {n_t}")
        bus_ids = [b["id"] for b in net["buses"]]
        for j, ld in enumerate(net.get("loads", [])):
            if ld["bus"] not in bus_ids:
                diag.add(f"{p}/loads/{j}/bus", f"unknown bus {ld['bus']!r}")
            if "profile" in ld and len(ld["profile"]) != n_t:
                diag.add(f"{p}/loads/{j}/profile", f"profile has {len(ld['profile'])} entries, expected {n_t}")
            if "series" in ld and len(ld["series"]) != n_t:
                diag.add(f"{p}/loads/{j}/series", f"series has {len(ld['series'])} entries, expected {n_t}")
        for j, ln in enumerate(net["links"]):
            for end in ("from", "to"):
                if ln[end] not in bus_ids:
                    diag.add(f"{p}/links/{j}/{end}", f"unknown bus {ln[end]!r}")
        if not diag.ok:
            continue
        try:
            pdn = pdn_from_dict(net, n_t)
        except (ValueError, KeyError, StopIteration) as exc:
            diag.add(p, f"cannot build network: {exc}")
            continue
        for f in validate_network(pdn):
            diag.add(p + ("/" + f.where if f.where else ""), f"{f.code}: {f.message}")

    seen_bus = set()
    for k, c in enumerate(doc["chargers"]):
        p = f"/chargers/{k}"
        if c["vertex"] not in vset:
            diag.add(f"{p}/vertex", f"unknown vertex {c['vertex']!r}")
        if c["rate"] > n_c - 1:
            diag.add(f"{p}/rate", f"rate {c['rate']} exceeds n_c - 1 = {n_c - 1}")
        if "price" in c and len(c["price"]) != n_t:
            diag.add(f"{p}/price", f"price series has {len(c['price'])} entries, expected n_t = {n_t}")
        if c["pdn"] not in nets:
            diag.add(f"{p}/pdn", f"unknown network {c['pdn']!r}")
            continue
        _, net = nets[c["pdn"]]
        bus = c.get("bus")
        if bus is None:
            continue
        match = [b for b in net["buses"] if b["id"] == bus]
        if not match:
            diag.add(f"{p}/bus", f"network {c['pdn']!r} has no bus {bus!r}")
            continue
        if len(match[0].get("phases", "abc")) != 3:
            diag.add(f"{p}/bus", f"bus {bus!r} does not carry all three phases")
        ref = net.get("reference", {}).get("bus", net["buses"][0]["id"])
        if bus == ref:
            diag.add(f"{p}/bus", "chargers cannot attach to the reference bus")
        if (c["pdn"], bus) in seen_bus:
            diag.add(f"{p}/bus", "another charger already uses this bus")
        seen_bus.add((c["pdn"], bus))

    for k, t in enumerate(doc["trips"]):
        p = f"/trips/{k}"
        for end in ("origin", "destination"):
            if t[end] not in vset:
                diag.add(f"{p}/{end}", f"unknown vertex {t[end]!r}")
        if t["origin"] == t["destination"]:
            diag.add(p, "origin equals destination")
        if t["departure"] > n_t:
            diag.add(f"{p}/departure", f"departure {t['departure']} beyond n_t = {n_t}")

    fleet = doc["fleet"]
    init = fleet["initial"]
    if isinstance(init, list):
        for k, e in enumerate(init):
            if e["vertex"] not in vset:
                diag.add(f"/fleet/initial/{k}/vertex", f"unknown vertex {e['vertex']!r}")
            if not 1 <= e["level"] <= n_c:
                diag.add(f"/fleet/initial/{k}/level", f"level outside 1..{n_c}")
    else:
        for k, v in enumerate(init.get("vertices", [])):
            if v not in vset:
                diag.add(f"/fleet/initial/vertices/{k}", f"unknown vertex {v!r}")
    for key in ("lower", "fixed"):
        for k, e in enumerate(fleet.get("final", {}).get(key, [])):
            if e["vertex"] not in vset:
                diag.add(f"/fleet/final/{key}/{k}/vertex", f"unknown vertex {e['vertex']!r}")
            if not 1 <= e["level"] <= n_c:
                diag.add(f"/fleet/final/{key}/{k}/level", f"level outside 1..{n_c}")
    return diag


def _distribution(entries) -> dict:
    out: dict = {}
    for e in entries:
        key = (e["vertex"], int(e["level"]))
        out[key] = out.get(key, 0.0) + float(e["count"])
    return out


def build_scenario(doc: dict, seed: int | None = None, name: str | None = None) -> Scenario:
    """Validate ``doc`` and construct the typed scenario (raises :class:`ScenarioError`)."""
    if seed is not None:
        doc = dict(doc, seed=seed)
    doc = assign_chargers(doc)
    diag = validate_document(doc)
    if not diag.ok:
        raise ScenarioError(f"scenario has {len(diag.findings)} problem(s)", diag.findings)
    hz = doc["horizon"]
    n_t, n_c = hz["n_t"], hz["n_c"]
    step_hours = float(hz.get("step_hours", DEFAULT_STEP_HOURS))
    unit_kwh = float(hz.get("unit_kwh", 1.0))

    arcs = []
    for a in doc["road"]["arcs"]:
        steps = a["steps"] if "steps" in a else to_steps(a["minutes"], step_hours)
        levels = a["energy_levels"] if "energy_levels" in a else to_levels(a.get("kwh", 0.0), unit_kwh)
        cap = a.get("capacity")
        arcs.append(RoadArc(a["from"], a["to"], float(a.get("distance_km", 0.0)), int(steps),
                            int(levels), math.inf if cap is None else float(cap)))
    road = RoadGraph(doc["road"]["vertices"], arcs)

    n_pdn = {}
    pdns = []
    prices = {}
    for net in doc["pdns"]:
        pdn = pdn_from_dict(net, n_t)
        n_pdn[pdn.name] = pdn
        prices[pdn.name] = np.asarray(net["price_per_kwh"], dtype=float)

    chargers, entries = [], []
    slots: dict = {net: [] for net in n_pdn}
    for k, c in enumerate(doc["chargers"]):
        cid = c.get("id") or f"s{k}"
        price = c.get("price", prices[c["pdn"]])
        chargers.append(ChargerSpec(c["vertex"], int(c["rate"]), int(c["plugs"]), price, cid))
        pdn = n_pdn[c["pdn"]]
        if c.get("bus") is None:
            raise ScenarioError(f"charger {cid!r}: no three-phase bus available in {c['pdn']!r}",
                                [Finding(f"/chargers/{k}/bus", "no free three-phase bus")])
        # peak draw of the station, per phase, in the network's units
        peak_kw = c["plugs"] * c["rate"] * unit_kwh / step_hours / 3.0
        peak = peak_kw * 1e3 / (pdn.base_va if pdn.per_unit else 1.0)
        slot_id = f"ch-{cid}"
        slots[c["pdn"]].append(ControllableSlot(slot_id, c["bus"], [0.0] * 3, [peak] * 3,
                                                [-math.inf] * 3, [math.inf] * 3))
        entries.append(CouplingEntry(k, c["pdn"], slot_id))
    for net_name, pdn in n_pdn.items():
        pdn.slots = pdn.slots + slots[net_name]
        pdns.append(pdn)

    trips = [TripRequest(t["origin"], t["destination"], int(t["departure"]), float(t["demand"]))
             for t in doc["trips"]]
    fl = doc["fleet"]
    init = fl["initial"]
    if isinstance(init, list):
        initial = _distribution(init)
    else:
        where = init.get("vertices") or list(road.vertices)
        level = min(n_c, max(1, int(round(init.get("soc", DEFAULT_SOC) * n_c))))
        initial = {(v, level): float(init["size"]) / len(where) for v in where}
    fin = fl.get("final", {})
    boundary = FleetBoundary(
        initial,
        _distribution(fin["fixed"]) if "fixed" in fin else None,
        _distribution(fin.get("lower", [])),
        float(fin.get("min_soc_fraction", DEFAULT_SOC)))
    return Scenario(
        name=name or doc.get("name", "scenario"), n_t=n_t, n_c=n_c, step_hours=step_hours,
        unit_kwh=unit_kwh, distance_price=float(doc.get("distance_price", 0.0)), road=road,
        chargers=chargers, trips=trips, boundary=boundary, pdns=pdns, pdn_price=prices,
        coupling=CouplingMap(entries), solver=dict(doc.get("solver", {})),
        analysis=dict(doc.get("analysis", {})), seed=int(doc.get("seed", 0)), source=doc)


def load_scenario(path, seed: int | None = None) -> Scenario:
    doc = read_document(path)
    return build_scenario(doc, seed, name=doc.get("name", Path(path).stem))


def validate_scenario(path) -> Diagnostics:
    """Findings for the document at ``path`` plus model sizes when it is valid."""
    try:
        doc = read_document(path)
    except ScenarioError as exc:
        return Diagnostics([Finding("", str(exc))])
    doc = assign_chargers(doc)
    diag = validate_document(doc)
    if diag.ok:
        from .coupling import build_fleet
        try:
            sc = build_scenario(doc)
            fleet = build_fleet(sc)
        except ScenarioError as exc:
            for f in exc.findings or [str(exc)]:
                diag.add("" if not isinstance(f, Finding) else f.pointer,
                         f if isinstance(f, str) else f.message)
            return diag
        diag.statistics = model_statistics(fleet.expanded, fleet.routes, sc.pdns).as_dict()
    return diag
