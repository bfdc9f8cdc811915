"""Unbalanced radial three-phase distribution networks.

A :class:`Pdn` is a tree of buses rooted at the reference (substation) bus.
Each bus carries a subset of the phases ``a``, ``b``, ``c``; each link
carries a subset of the phases of both of its end buses and a phase
impedance matrix. Loads are wye-connected constant power (consumption is
positive, generators are negative loads).

Electrical quantities are either SI (ohm, siemens, volt, volt-ampere) or
per-unit. The per-unit system here is per phase: ``base_va`` is the
single-phase power base and ``base_v`` the line-to-neutral voltage base, so
``Z_base = base_v**2 / base_va``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Hashable

import numpy as np

PHASES = "abc"
_ALPHA = np.exp(-2j * np.pi / 3)
# balanced positive-sequence phasors for a, b, c
BALANCED = np.array([1.0, _ALPHA, _ALPHA.conjugate()], dtype=complex)


def phase_index(phases: str) -> list[int]:
    return [PHASES.index(p) for p in phases]


def _norm_phases(phases: str) -> str:
    phases = phases.lower()
    if not phases or any(p not in PHASES for p in phases) or len(set(phases)) != len(phases):
        raise ValueError(f"bad phase set {phases!r}")
    return "".join(p for p in PHASES if p in phases)


@dataclass
class Bus:
    id: Hashable
    phases: str = "abc"
    shunt: np.ndarray | None = None

    def __post_init__(self):
        self.phases = _norm_phases(self.phases)
        k = len(self.phases)
        if self.shunt is None:
            self.shunt = np.zeros((k, k), dtype=complex)
        self.shunt = np.asarray(self.shunt, dtype=complex)


@dataclass
class Link:
    from_bus: Hashable
    to_bus: Hashable
    z: np.ndarray
    phases: str = "abc"

    def __post_init__(self):
        self.phases = _norm_phases(self.phases)
        self.z = np.asarray(self.z, dtype=complex)

    @property
    def key(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass
class ControllableSlot:
    """Controllable load at ``bus``; bounds are per phase of the bus (consumption positive)."""

    id: str
    bus: Hashable
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray

    def __post_init__(self):
        for name in ("p_min", "p_max", "q_min", "q_max"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))


@dataclass
class Pdn:
    name: str
    buses: list[Bus]
    links: list[Link]
    n_t: int
    v_ref: np.ndarray                      # (n_t, |phases of reference|)
    loads: dict[Hashable, np.ndarray] = field(default_factory=dict)   # bus -> (n_t, k)
    slots: list[ControllableSlot] = field(default_factory=list)
    rating: float = math.inf
    u_min: float = 0.96
    u_max: float = 1.04
    voltage_bounds: dict[Hashable, tuple[float, float]] = field(default_factory=dict)
    base_va: float = 1e6
    base_v: float = 12.47e3 / math.sqrt(3)
    per_unit: bool = True
    reference: Hashable = None

    def __post_init__(self):
        self.buses = list(self.buses)
        self.links = list(self.links)
        self.slots = list(self.slots)
        if self.reference is None:
            self.reference = self.buses[0].id
        ref = self.bus(self.reference)
        k0 = len(ref.phases)
        v = np.asarray(self.v_ref, dtype=complex)
        if v.ndim == 1:
            v = np.broadcast_to(v, (self.n_t, k0))
        self.v_ref = np.array(v, dtype=complex)
        loads = {}
        for b, s in self.loads.items():
            s = np.asarray(s, dtype=complex)
            if s.ndim == 1:
                s = np.broadcast_to(s, (self.n_t, len(s)))
            loads[b] = np.array(s, dtype=complex)
        self.loads = loads

    # -- lookups ------------------------------------------------------------

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def bus_index(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}

    def slot(self, slot_id) -> ControllableSlot:
        for s in self.slots:
            if s.id == slot_id:
                return s
        raise KeyError(slot_id)

    def bounds_for(self, bus_id) -> tuple[float, float]:
        return self.voltage_bounds.get(bus_id, (self.u_min, self.u_max))

    @property
    def z_base(self) -> float:
        return self.base_v ** 2 / self.base_va

    def load(self, bus_id) -> np.ndarray:
        if bus_id in self.loads:
            return self.loads[bus_id]
        return np.zeros((self.n_t, len(self.bus(bus_id).phases)), dtype=complex)

    def with_loads(self, loads: dict, **kw) -> "Pdn":
        return replace(self, loads=loads, **kw)


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    where: str = ""

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.message}" if self.where else \
            f"[{self.code}] {self.message}"


def validate_network(pdn: Pdn) -> list[Finding]:
    """Check tree topology, phase consistency, impedances and data shapes.

    Returns a list of findings; an empty list means the network is usable.
    """
    out: list[Finding] = []
    ids = [b.id for b in pdn.buses]
    if len(set(ids)) != len(ids):
        out.append(Finding("duplicate-bus", "bus ids are not unique"))
    buses = {b.id: b for b in pdn.buses}
    if pdn.reference not in buses:
        out.append(Finding("reference", f"reference bus {pdn.reference!r} not declared"))
        return out

    adj: dict = {b: [] for b in buses}
    for k, ln in enumerate(pdn.links):
        where = f"links/{k}"
        if ln.from_bus not in buses or ln.to_bus not in buses:
            out.append(Finding("dangling-link", "endpoint is not a declared bus", where))
            continue
        if ln.from_bus == ln.to_bus:
            out.append(Finding("topology", "self-loop link", where))
            continue
        adj[ln.from_bus].append((ln.to_bus, k))
        adj[ln.to_bus].append((ln.from_bus, k))
        kk = len(ln.phases)
        if ln.z.shape != (kk, kk):
            out.append(Finding("shape", f"impedance is {ln.z.shape}, expected {(kk, kk)}", where))
        else:
            if not np.all(np.isfinite(ln.z)) or np.linalg.cond(ln.z) > 1e12:
                out.append(Finding("impedance", "impedance matrix is singular", where))
        for end in (ln.from_bus, ln.to_bus):
            if not set(ln.phases) <= set(buses[end].phases):
                out.append(Finding("phase-consistency",
                                   f"link phases {ln.phases!r} not carried by bus {end!r} "
                                   f"({buses[end].phases!r})", where))

    if len(pdn.links) != len(pdn.buses) - 1:
        out.append(Finding("topology", f"{len(pdn.links)} links for {len(pdn.buses)} buses; "
                                       "a tree needs |L| = |N| - 1"))
    # BFS from the reference: detects cycles, disconnected buses and reversed links
    seen = {pdn.reference}
    used_links = set()
    queue = [pdn.reference]
    while queue:
        u = queue.pop(0)
        for v, k in adj[u]:
            if k in used_links:
                continue
            used_links.add(k)
            if v in seen:
                out.append(Finding("topology", f"link closes a cycle at bus {v!r}", f"links/{k}"))
                continue
            if pdn.links[k].from_bus != u:
                out.append(Finding("orientation", "link must point away from the reference bus",
                                   f"links/{k}"))
            seen.add(v)
            queue.append(v)
    for b in buses:
        if b not in seen:
            out.append(Finding("topology", f"bus {b!r} is not connected to the reference"))

    for b, bus in buses.items():
        incident = set()
        for _, k in adj[b]:
            incident |= set(pdn.links[k].phases)
        # the reference may carry phases no link uses; other buses would float
        bad = not incident <= set(bus.phases) if b == pdn.reference else incident != set(bus.phases)
        if adj[b] and bad:
            out.append(Finding("phase-consistency",
                               f"bus phases {bus.phases!r} differ from the union of incident "
                               f"link phases {''.join(sorted(incident))!r}", f"buses/{b}"))
        kk = len(bus.phases)
        if bus.shunt.shape != (kk, kk):
            out.append(Finding("shape", f"shunt is {bus.shunt.shape}, expected {(kk, kk)}",
                               f"buses/{b}"))
    # downstream links may not carry phases their bus receives from no upstream link
    upstream = {ln.to_bus: ln for ln in pdn.links}
    for k, ln in enumerate(pdn.links):
        up = upstream.get(ln.from_bus)
        if up is not None and not set(ln.phases) <= set(up.phases):
            out.append(Finding("phase-consistency",
                               "link carries phases not fed from upstream", f"links/{k}"))

    k0 = len(buses[pdn.reference].phases)
    if pdn.v_ref.shape != (pdn.n_t, k0):
        out.append(Finding("shape", f"reference voltage is {pdn.v_ref.shape}, "
                                    f"expected {(pdn.n_t, k0)}", "reference"))
    for b, s in pdn.loads.items():
        if b not in buses:
            out.append(Finding("dangling-load", f"load at unknown bus {b!r}", f"loads/{b}"))
        elif b == pdn.reference and np.any(s != 0):
            out.append(Finding("load", "loads at the reference bus are not supported",
                               f"loads/{b}"))
        elif s.shape != (pdn.n_t, len(buses[b].phases)):
            out.append(Finding("shape", f"load series is {s.shape}, expected "
                                        f"{(pdn.n_t, len(buses[b].phases))}", f"loads/{b}"))
    slot_ids = [s.id for s in pdn.slots]
    if len(set(slot_ids)) != len(slot_ids):
        out.append(Finding("duplicate-slot", "controllable load ids are not unique"))
    for s in pdn.slots:
        where = f"slots/{s.id}"
        if s.bus not in buses:
            out.append(Finding("dangling-slot", f"slot at unknown bus {s.bus!r}", where))
            continue
        if s.bus == pdn.reference:
            out.append(Finding("slot", "controllable loads must sit at a PQ bus", where))
        kk = len(buses[s.bus].phases)
        for name in ("p_min", "p_max", "q_min", "q_max"):
            if getattr(s, name).shape not in ((kk,), (1,)):
                out.append(Finding("shape", f"{name} must have one entry per bus phase", where))
        if np.any(s.p_min > s.p_max) or np.any(s.q_min > s.q_max):
            out.append(Finding("bounds", "lower bound above upper bound", where))
    if not pdn.u_min < pdn.u_max:
        out.append(Finding("bounds", "u_min must be below u_max"))
    for b, (lo, hi) in pdn.voltage_bounds.items():
        if not lo < hi:
            out.append(Finding("bounds", "u_min must be below u_max", f"buses/{b}"))
    if not pdn.rating > 0:
        out.append(Finding("bounds", "substation rating must be positive"))
    if not (pdn.base_va > 0 and pdn.base_v > 0):
        out.append(Finding("base", "per-unit bases must be positive"))
    return out


# -- per-unit ---------------------------------------------------------------

def _scale(pdn: Pdn, s_factor: float, v_factor: float, per_unit: bool, **bases) -> Pdn:
    z_factor = v_factor ** 2 / s_factor      # multiply impedances by this
    y_factor = 1.0 / z_factor
    buses = [Bus(b.id, b.phases, b.shunt * y_factor) for b in pdn.buses]
    links = [Link(l.from_bus, l.to_bus, l.z * z_factor, l.phases) for l in pdn.links]
    slots = [ControllableSlot(s.id, s.bus, s.p_min * s_factor, s.p_max * s_factor,
                              s.q_min * s_factor, s.q_max * s_factor) for s in pdn.slots]
    return replace(pdn, buses=buses, links=links, slots=slots,
                   v_ref=pdn.v_ref * v_factor,
                   loads={b: s * s_factor for b, s in pdn.loads.items()},
                   rating=pdn.rating * s_factor, per_unit=per_unit, **bases)


def per_unit_normalize(pdn: Pdn, base_mva: float | None = None,
                       base_kv: float | None = None) -> Pdn:
    """Scale an SI network to per-unit.

    ``base_mva`` is the per-phase power base in MVA and ``base_kv`` the
    line-to-neutral voltage base in kV; they default to the network's own
    bases. Voltage-magnitude bounds are already per-unit and are untouched.
    """
    if pdn.per_unit:
        raise ValueError(f"network {pdn.name!r} is already per-unit")
    base_va = pdn.base_va if base_mva is None else base_mva * 1e6
    base_v = pdn.base_v if base_kv is None else base_kv * 1e3
    if not (base_va > 0 and base_v > 0):
        raise ValueError("per-unit bases must be positive")
    return _scale(pdn, 1.0 / base_va, 1.0 / base_v, True, base_va=base_va, base_v=base_v)


def denormalize(pdn: Pdn) -> Pdn:
    if not pdn.per_unit:
        raise ValueError(f"network {pdn.name!r} is already in SI units")
    return _scale(pdn, pdn.base_va, pdn.base_v, False)


def as_per_unit(pdn: Pdn) -> Pdn:
    return pdn if pdn.per_unit else per_unit_normalize(pdn)


# -- array view for the kernels ------------------------------------------------

@dataclass
class FeederArrays:
    """Dense per-bus arrays (index = position in ``pdn.buses``), all per-unit."""

    order: np.ndarray       # BFS order, reference first
    parent: np.ndarray      # parent bus index, -1 at the reference
    depth: np.ndarray
    mask: np.ndarray        # (n, 3) bus phases
    lmask: np.ndarray       # (n, 3) phases of the link feeding the bus
    z: np.ndarray           # (n, 3, 3) impedance of the link feeding the bus
    y: np.ndarray           # (n, 3, 3) admittance of that link (inverse on its phases)
    ysh: np.ndarray         # (n, 3, 3)
    link_of: np.ndarray     # index into pdn.links of the link feeding the bus, -1 at root
    root: int


def feeder_arrays(pdn: Pdn) -> FeederArrays:
    idx = pdn.bus_index()
    n = len(pdn.buses)
    mask = np.zeros((n, 3), dtype=bool)
    ysh = np.zeros((n, 3, 3), dtype=complex)
    for k, b in enumerate(pdn.buses):
        ph = phase_index(b.phases)
        mask[k, ph] = True
        ysh[k][np.ix_(ph, ph)] = b.shunt
    parent = -np.ones(n, dtype=np.int64)
    link_of = -np.ones(n, dtype=np.int64)
    lmask = np.zeros((n, 3), dtype=bool)
    z = np.zeros((n, 3, 3), dtype=complex)
    y = np.zeros((n, 3, 3), dtype=complex)
    children: dict[int, list[int]] = {k: [] for k in range(n)}
    for k, ln in enumerate(pdn.links):
        a, b = idx[ln.from_bus], idx[ln.to_bus]
        parent[b] = a
        link_of[b] = k
        children[a].append(b)
        ph = phase_index(ln.phases)
        lmask[b, ph] = True
        z[b][np.ix_(ph, ph)] = ln.z
        y[b][np.ix_(ph, ph)] = np.linalg.inv(ln.z)
    root = idx[pdn.reference]
    order = [root]
    depth = np.zeros(n, dtype=np.int64)
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for v in children[u]:
            depth[v] = depth[u] + 1
            order.append(v)
    if len(order) != n:
        raise ValueError(f"network {pdn.name!r} is not a tree rooted at the reference bus")
    return FeederArrays(np.array(order, dtype=np.int64), parent, depth, mask, lmask, z, y,
                        ysh, link_of, root)


# -- fixed linearization parameters ----------------------------------------------

@dataclass
class FixedLinearizationParams:
    """Per-link voltage-ratio matrices and fixed loss matrices.

    ``gamma[k]`` and ``ell[k]`` have shape ``(n_t, m, m)`` for link ``k`` with
    ``m`` phases; a leading dimension of 1 means constant in time.
    ``v_est`` is ``(n_t, n_bus, 3)`` and ``i_est`` is ``(n_t, n_bus, 3)``
    (current of the link feeding each bus).
    """

    gamma: list[np.ndarray]
    ell: list[np.ndarray]
    v_est: np.ndarray
    i_est: np.ndarray
    source: str = "nominal"

    def at(self, k: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        g, l = self.gamma[k], self.ell[k]
        return g[min(t, g.shape[0] - 1)], l[min(t, l.shape[0] - 1)]

    @property
    def n_t(self) -> int:
        return max(g.shape[0] for g in self.gamma) if self.gamma else self.v_est.shape[0]


def ratio_matrix(v: np.ndarray) -> np.ndarray:
    """``G[i, j] = v[i] / v[j]``."""
    v = np.asarray(v, dtype=complex)
    g = v[:, None] / v[None, :]
    np.fill_diagonal(g, 1.0)
    return g


def _params_from_estimates(pdn: Pdn, v_est: np.ndarray, i_est: np.ndarray, source: str):
    idx = pdn.bus_index()
    gamma, ell = [], []
    for ln in pdn.links:
        a, b = idx[ln.from_bus], idx[ln.to_bus]
        ph = phase_index(ln.phases)
        va = v_est[:, a][:, ph]                    # (T, m)
        ib = i_est[:, b][:, ph]
        g = va[:, :, None] / va[:, None, :]
        g[:, np.arange(len(ph)), np.arange(len(ph))] = 1.0
        gamma.append(g)
        ell.append(ib[:, :, None] * ib[:, None, :].conj())
    return FixedLinearizationParams(gamma, ell, v_est, i_est, source)


def nominal_linearization(pdn: Pdn) -> FixedLinearizationParams:
    """Balanced nominal voltages and zero link losses (constant in time)."""
    n = len(pdn.buses)
    v_est = np.broadcast_to(BALANCED, (1, n, 3)).copy()
    i_est = np.zeros((1, n, 3), dtype=complex)
    return _params_from_estimates(pdn, v_est, i_est, "nominal")


def estimate_linearization_from_base(pdn: Pdn, base_solution) -> FixedLinearizationParams:
    """Take voltage and current estimates from an exact base-case power flow.

    ``base_solution`` is a sequence of power-flow solutions, one per time step,
    in the same unit system as ``pdn``.
    """
    sols = list(base_solution)
    have = sorted(s.t for s in sols)
    if have != list(range(pdn.n_t)):
        missing = sorted(set(range(pdn.n_t)) - set(have))
        raise ValueError(f"base solution misses time steps {missing[:10]}")
    sols.sort(key=lambda s: s.t)
    v_est = np.stack([s.v for s in sols])
    i_est = np.stack([s.i for s in sols])
    return _params_from_estimates(pdn, v_est, i_est, "base-case power flow")


# -- JSON network description ---------------------------------------------------

def _cmat(data, shape=None) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("complex values must be [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    if shape is not None:
        out = out.reshape(shape)
    return out


def _pairs(arr) -> Any:
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def pdn_from_dict(data: dict, n_t: int) -> Pdn:
    """Build a network from its JSON description (see README, "Network JSON")."""
    buses = []
    for b in data["buses"]:
        phases = b.get("phases", "abc")
        shunt = _cmat(b["shunt"]) if "shunt" in b else None
        buses.append(Bus(b["id"], phases, shunt))
    links = [Link(l["from"], l["to"], _cmat(l["z"]), l.get("phases", "abc")) for l in data["links"]]
    ref = data.get("reference", {})
    ref_bus = ref.get("bus", buses[0].id)
    k0 = len(next(b for b in buses if b.id == ref_bus).phases)
    if "voltage" in ref:
        v_ref = _cmat(ref["voltage"])
    else:
        mag = ref.get("magnitude", 1.0)
        ph = phase_index(next(b for b in buses if b.id == ref_bus).phases)
        v_ref = mag * BALANCED[ph]
        if not data.get("per_unit", True):
            v_ref = v_ref * data["base_kv"] * 1e3
    v_ref = np.asarray(v_ref)
    if v_ref.ndim == 1 and v_ref.shape[0] != k0:
        raise ValueError("reference voltage needs one entry per reference phase")
    loads: dict = {}
    for ld in data.get("loads", []):
        bus = ld["bus"]
        if "series" in ld:
            s = _cmat(ld["series"])
        else:
            s = _cmat(ld["nominal"])[None, :] * np.asarray(ld.get("profile", [1.0] * n_t),
                                                           dtype=float)[:, None]
        loads[bus] = loads.get(bus, 0) + s
    slots = []
    for s in data.get("controllable", []):
        bus = next(b for b in buses if b.id == s["bus"])
        k = len(bus.phases)
        slots.append(ControllableSlot(
            s["id"], s["bus"],
            np.broadcast_to(s.get("p_min", 0.0), (k,)),
            np.broadcast_to(s.get("p_max", math.inf), (k,)),
            np.broadcast_to(s.get("q_min", -math.inf), (k,)),
            np.broadcast_to(s.get("q_max", math.inf), (k,))))
    vb = {}
    for b in data["buses"]:
        if "u_min" in b or "u_max" in b:
            vb[b["id"]] = (b.get("u_min", data.get("u_min", 0.96)),
                           b.get("u_max", data.get("u_max", 1.04)))
    rating = data.get("rating_va")
    per_unit = data.get("per_unit", True)
    base_va = data.get("base_mva", 1.0) * 1e6
    if rating is not None and per_unit:
        rating = rating / base_va          # rating_va is always in VA
    return Pdn(
        name=str(data["id"]), buses=buses, links=links, n_t=n_t, v_ref=v_ref, loads=loads,
        slots=slots, rating=math.inf if rating is None else float(rating),
        u_min=data.get("u_min", 0.96), u_max=data.get("u_max", 1.04), voltage_bounds=vb,
        base_va=base_va, base_v=data.get("base_kv", 7.2) * 1e3, per_unit=per_unit,
        reference=ref_bus)


def pdn_to_dict(pdn: Pdn) -> dict:
    return {
        "id": pdn.name,
        "per_unit": pdn.per_unit,
        "base_mva": pdn.base_va / 1e6,
        "base_kv": pdn.base_v / 1e3,
        "rating_va": None if math.isinf(pdn.rating) else
        pdn.rating * (pdn.base_va if pdn.per_unit else 1.0),
        "u_min": pdn.u_min,
        "u_max": pdn.u_max,
        "buses": [{"id": b.id, "phases": b.phases, "shunt": _pairs(b.shunt),
                   **({"u_min": pdn.voltage_bounds[b.id][0], "u_max": pdn.voltage_bounds[b.id][1]}
                      if b.id in pdn.voltage_bounds else {})} for b in pdn.buses],
        "links": [{"from": l.from_bus, "to": l.to_bus, "phases": l.phases, "z": _pairs(l.z)}
                  for l in pdn.links],
        "reference": {"bus": pdn.reference, "voltage": _pairs(pdn.v_ref)},
        "loads": [{"bus": b, "series": _pairs(s)} for b, s in pdn.loads.items()],
        "controllable": [{"id": s.id, "bus": s.bus, "p_min": s.p_min.tolist(),
                          "p_max": s.p_max.tolist(), "q_min": s.q_min.tolist(),
                          "q_max": s.q_max.tolist()} for s in pdn.slots],
    }
