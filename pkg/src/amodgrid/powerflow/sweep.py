"""Backward/forward sweep power flow for radial three-phase feeders.

The kernel works on dense ``(n_bus, 3)`` arrays in per-unit with absent
phases held at zero. Two implementations exist: a numba kernel that loops
over time steps, and a numpy version vectorized over tree levels and time
steps. ``AMODGRID_DISABLE_NUMBA=1`` selects the numpy one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .. import _accel
from .._accel import njit
from ..errors import ConvergenceError
from ..pdn import FeederArrays, Pdn, as_per_unit, feeder_arrays, phase_index

TOL = 1e-8
MAX_ITER = 100
V_FLOOR = 0.1

OK, NOT_CONVERGED, LOW_VOLTAGE = 0, 1, 2


@njit(cache=True)
def _sweep_numba(order, parent, mask, lmask, z, ysh, vref, sload, tol, max_iter, vmin):
    n_t = sload.shape[0]
    n = sload.shape[1]
    root = order[0]
    v_out = np.zeros((n_t, n, 3), dtype=np.complex128)
    i_out = np.zeros((n_t, n, 3), dtype=np.complex128)
    jroot = np.zeros((n_t, 3), dtype=np.complex128)
    iters = np.zeros(n_t, dtype=np.int64)
    status = np.zeros(n_t, dtype=np.int64)
    for t in range(n_t):
        v = np.zeros((n, 3), dtype=np.complex128)
        for b in range(n):
            for p in range(3):
                if mask[b, p]:
                    v[b, p] = vref[t, p]
        j = np.zeros((n, 3), dtype=np.complex128)
        cur = np.zeros((n, 3), dtype=np.complex128)
        done = False
        it = 0
        while True:
            # backward: currents drawn by each subtree
            for b in range(n):
                for p in range(3):
                    j[b, p] = 0.0
            for k in range(n - 1, -1, -1):
                b = order[k]
                for p in range(3):
                    if not mask[b, p]:
                        continue
                    acc = np.conj(sload[t, b, p] / v[b, p])
                    for q in range(3):
                        acc += ysh[b, p, q] * v[b, q]
                    j[b, p] += acc
                if b != root:
                    a = parent[b]
                    for p in range(3):
                        if lmask[b, p]:
                            cur[b, p] = j[b, p]
                            j[a, p] += j[b, p]
                        else:
                            cur[b, p] = 0.0
            if done:
                break
            if it >= max_iter:
                status[t] = NOT_CONVERGED
                break
            it += 1
            # forward: voltage drops from the root outwards
            dv = 0.0
            low = False
            for k in range(1, n):
                b = order[k]
                a = parent[b]
                for p in range(3):
                    if not lmask[b, p]:
                        continue
                    nv = v[a, p]
                    for q in range(3):
                        nv -= z[b, p, q] * cur[b, q]
                    d = abs(nv - v[b, p])
                    if d > dv:
                        dv = d
                    v[b, p] = nv
                    if abs(nv) < vmin:
                        low = True
            if low:
                status[t] = LOW_VOLTAGE
                break
            if dv < tol:
                done = True      # one more backward pass for consistent currents
        iters[t] = it
        for b in range(n):
            for p in range(3):
                v_out[t, b, p] = v[b, p]
                i_out[t, b, p] = cur[b, p]
        for p in range(3):
            jroot[t, p] = j[root, p]
    return v_out, i_out, jroot, iters, status


def _sweep_numpy(order, parent, mask, lmask, z, ysh, vref, sload, tol, max_iter, vmin,
                 depth=None):
    n_t, n, _ = sload.shape
    root = order[0]
    if depth is None:
        depth = np.zeros(n, dtype=np.int64)
        for b in order[1:]:
            depth[b] = depth[parent[b]] + 1
    levels = [order[depth[order] == d] for d in range(int(depth.max()) + 1)]
    v = np.where(mask[None], vref[:, None, :], 0.0).astype(complex)
    cur = np.zeros((n_t, n, 3), dtype=complex)
    j = np.zeros((n_t, n, 3), dtype=complex)
    iters = np.zeros(n_t, dtype=np.int64)
    status = np.zeros(n_t, dtype=np.int64)
    active = np.ones(n_t, dtype=bool)
    finishing = np.zeros(n_t, dtype=bool)
    lm = lmask[None].astype(float)

    def backward(ts):
        vt = v[ts]
        with np.errstate(divide="ignore", invalid="ignore"):
            own = np.where(mask[None], np.conj(sload[ts] / np.where(mask[None], vt, 1.0)), 0.0)
        own = own + np.einsum("bpq,tbq->tbp", ysh, vt)
        jt = own
        ct = np.zeros_like(own)
        for lev in reversed(levels[1:]):
            ct[:, lev] = jt[:, lev] * lm[:, lev]
            np.add.at(jt, (slice(None), parent[lev]), ct[:, lev])
        j[ts] = jt
        cur[ts] = ct

    while True:
        ts = np.flatnonzero(active | finishing)
        if ts.size == 0:
            break
        backward(ts)
        finishing[:] = False
        ts = np.flatnonzero(active)
        over = iters[ts] >= max_iter
        if over.any():
            status[ts[over]] = NOT_CONVERGED
            active[ts[over]] = False
            ts = ts[~over]
        if ts.size == 0:
            continue
        iters[ts] += 1
        vt = v[ts]
        old = vt.copy()
        ct = cur[ts]
        for lev in levels[1:]:
            drop = np.einsum("bpq,tbq->tbp", z[lev], ct[:, lev])
            vt[:, lev] = np.where(lmask[None, lev], vt[:, parent[lev]] - drop, vt[:, lev])
        v[ts] = vt
        dv = np.abs(vt - old).max(axis=(1, 2)) if n > 1 else np.zeros(ts.size)
        low = np.any(lmask[None] & (np.abs(vt) < vmin), axis=(1, 2))
        status[ts[low]] = LOW_VOLTAGE
        active[ts[low]] = False
        conv = (dv < tol) & ~low
        active[ts[conv]] = False
        finishing[ts[conv]] = True
    return v, cur, j[:, root].copy(), iters, status


def sweep_arrays(fa: FeederArrays, vref: np.ndarray, sload: np.ndarray, tol: float = TOL,
                 max_iter: int = MAX_ITER, vmin: float = V_FLOOR, use_numba: bool | None = None):
    """Run the sweep on raw arrays.

    ``vref`` is ``(n_t, 3)`` and ``sload`` the consumed power ``(n_t, n_bus, 3)``,
    both per-unit. Returns ``(v, i, j_root, iterations, status)``.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    vref = np.ascontiguousarray(vref, dtype=np.complex128)
    sload = np.ascontiguousarray(sload, dtype=np.complex128)
    args = (fa.order, fa.parent, fa.mask, fa.lmask, fa.z, fa.ysh, vref, sload,
            float(tol), int(max_iter), float(vmin))
    if use_numba:
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        return _sweep_numba(*args)
    return _sweep_numpy(*args, depth=fa.depth)


# -- public API -----------------------------------------------------------------

@dataclass
class InjectionSet:
    """Power injections at PQ buses: ``s_inj = -s_unc - sum of controllable loads``.

    Stored per bus as ``(n_t, |phases|)`` arrays in the network's own units.
    """

    injections: dict[Hashable, np.ndarray]
    n_t: int

    def consumption(self, pdn: Pdn) -> np.ndarray:
        """Dense consumed power ``(n_t, n_bus, 3)`` (the negated injection)."""
        idx = pdn.bus_index()
        out = np.zeros((self.n_t, len(pdn.buses), 3), dtype=complex)
        for b, s in self.injections.items():
            out[:, idx[b], phase_index(pdn.bus(b).phases)] = -s
        return out


def build_injections(pdn: Pdn, controllable: Mapping[str, np.ndarray] | None = None) -> InjectionSet:
    """Injections from the uncontrollable loads and controllable slot set-points.

    ``controllable`` maps slot id to a ``(n_t, |phases of its bus|)`` complex series
    (consumption positive). Missing slots draw nothing.
    """
    controllable = controllable or {}
    unknown = set(controllable) - {s.id for s in pdn.slots}
    if unknown:
        raise KeyError(f"unknown controllable loads {sorted(unknown)}")
    inj = {}
    for bus in pdn.buses:
        if bus.id == pdn.reference:
            continue
        s = -pdn.load(bus.id).astype(complex)
        inj[bus.id] = s
    for slot in pdn.slots:
        if slot.id in controllable:
            sc = np.asarray(controllable[slot.id], dtype=complex)
            k = len(pdn.bus(slot.bus).phases)
            if sc.ndim == 1:
                sc = np.broadcast_to(sc, (pdn.n_t, k))
            if sc.shape != (pdn.n_t, k):
                raise ValueError(f"slot {slot.id!r}: series shape {sc.shape}, expected {(pdn.n_t, k)}")
            inj[slot.bus] = inj[slot.bus] - sc
    return InjectionSet(inj, pdn.n_t)


@dataclass
class PowerFlowSolution:
    """Exact solution at one time step, in the units of the network it was solved on.

    ``v`` is ``(n_bus, 3)``, ``i`` is the current of the link feeding each bus
    ``(n_bus, 3)`` (zero at the reference), ``s0`` the reference-bus injection
    per phase. Absent phases are zero.
    """

    t: int
    bus_ids: list
    phases: list[str]
    v: np.ndarray
    i: np.ndarray
    s0: np.ndarray
    iterations: int
    residual: float
    per_unit: bool = True
    meta: dict = field(default_factory=dict)

    def voltage(self, bus) -> np.ndarray:
        k = self.bus_ids.index(bus)
        return self.v[k, phase_index(self.phases[k])]

    def magnitudes(self) -> dict:
        return {b: np.abs(self.voltage(b)) for b in self.bus_ids}

    @property
    def s0_total(self) -> complex:
        return complex(self.s0.sum())


def powerflow_residual(pdn: Pdn, v: np.ndarray, s_load: np.ndarray) -> np.ndarray:
    """Mismatch of the nodal power balance at every PQ bus and phase.

    ``v`` and ``s_load`` are ``(n_bus, 3)`` in the units of ``pdn``. The balance is
    ``s_inj = diag(v v^H Ysh^H) + sum over incident links of diag(v (v - v_other)^H Y^H)``.
    """
    idx = pdn.bus_index()
    mis = np.zeros((len(pdn.buses), 3), dtype=complex)
    for b in pdn.buses:
        k = idx[b.id]
        ph = phase_index(b.phases)
        vb = v[k, ph]
        mis[k, ph] = -s_load[k, ph] - vb * np.conj(b.shunt @ vb)
    for ln in pdn.links:
        a, b = idx[ln.from_bus], idx[ln.to_bus]
        ph = phase_index(ln.phases)
        y = np.linalg.inv(ln.z)
        cur = y @ (v[a, ph] - v[b, ph])
        mis[a, ph] -= v[a, ph] * np.conj(cur)
        mis[b, ph] -= v[b, ph] * np.conj(-cur)
    mis[idx[pdn.reference]] = 0.0
    return mis


def solve_power_flow_series(pdn: Pdn, injections: InjectionSet | None = None,
                            steps=None, tol: float = TOL, max_iter: int = MAX_ITER,
                            use_numba: bool | None = None) -> list[PowerFlowSolution]:
    """Solve every requested time step (all by default) in one kernel call."""
    if injections is None:
        injections = build_injections(pdn)
    steps = list(range(pdn.n_t)) if steps is None else list(steps)
    for t in steps:
        if not 0 <= t < pdn.n_t:
            raise IndexError(f"time step {t} outside horizon 0..{pdn.n_t - 1}")
    sload_native = injections.consumption(pdn)[steps]
    pu = as_per_unit(pdn)
    s_scale = 1.0 if pdn.per_unit else 1.0 / pdn.base_va
    v_scale = 1.0 if pdn.per_unit else 1.0 / pdn.base_v
    fa = feeder_arrays(pu)
    ref_ph = phase_index(pu.bus(pu.reference).phases)
    vref = np.zeros((len(steps), 3), dtype=complex)
    vref[:, ref_ph] = pu.v_ref[steps]
    v, cur, jroot, iters, status = sweep_arrays(fa, vref, sload_native * s_scale, tol,
                                                max_iter, V_FLOOR, use_numba)
    for k, t in enumerate(steps):
        if status[k] == NOT_CONVERGED:
            raise ConvergenceError(f"power flow of {pdn.name!r} did not converge within "
                                   f"{max_iter} iterations at t={t}", t=t, pdn=pdn.name)
        if status[k] == LOW_VOLTAGE:
            raise ConvergenceError(f"power flow of {pdn.name!r} collapsed below {V_FLOOR} p.u. "
                                   f"at t={t}", t=t, pdn=pdn.name)
    root = fa.root
    ids = [b.id for b in pdn.buses]
    phases = [b.phases for b in pdn.buses]
    out = []
    for k, t in enumerate(steps):
        s0 = v[k, root] * np.conj(jroot[k])
        # back to the network's units
        vk = v[k] / v_scale
        ik = cur[k] * v_scale / s_scale
        s0 = s0 / s_scale
        res = np.abs(powerflow_residual(pdn, vk, sload_native[k])).max() * s_scale
        out.append(PowerFlowSolution(t, ids, phases, vk, ik, s0, int(iters[k]), float(res),
                                     pdn.per_unit))
    return out


def solve_power_flow(pdn: Pdn, injections: InjectionSet | None = None, t: int = 0,
                     **kw) -> PowerFlowSolution:
    return solve_power_flow_series(pdn, injections, [t], **kw)[0]


def validate_solution(pdn: Pdn, controllable: Mapping[str, np.ndarray] | None = None,
                      **kw) -> list[PowerFlowSolution]:
    """Exact power flow for all time steps with the given controllable loads."""
    return solve_power_flow_series(pdn, build_injections(pdn, controllable), **kw)


def base_case(pdn: Pdn, **kw) -> list[PowerFlowSolution]:
    """Exact power flow with every controllable load at zero."""
    return validate_solution(pdn, None, **kw)


def export_voltages_csv(solutions: Mapping[str, list], path) -> int:
    """Write ``pdn, t, bus, phase, v_pu, angle_deg`` rows for per-unit solutions.

    ``solutions`` maps network name to its solution list. Returns the row count.
    """
    import csv
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pdn", "t", "bus", "phase", "v_pu", "angle_deg"])
        for name, sols in solutions.items():
            for sol in sols:
                for k, b in enumerate(sol.bus_ids):
                    for p in sol.phases[k]:
                        val = sol.v[k, "abc".index(p)]
                        w.writerow([name, sol.t, b, p, f"{abs(val):.9f}",
                                    f"{np.degrees(np.angle(val)):.6f}"])
                        rows += 1
    return rows
