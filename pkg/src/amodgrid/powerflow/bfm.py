"""Linearized branch-flow (BFM-LP) constraints for one feeder.

Losses and the voltage ratios between phases are fixed parameters (see
:class:`amodgrid.pdn.FixedLinearizationParams`), which makes the branch-flow
equations linear in the squared-voltage matrices ``V`` and the sending-end
link powers ``Lambda``. All electrical quantities in the LP are per-unit.

Variable layout per time step:

* ``V`` per bus, Hermitian: real diagonal plus real/imaginary upper triangle
  (``|phases|**2`` scalars);
* ``Lambda`` per link phase, real and imaginary part;
* ``s0`` per reference phase, real and imaginary part;
* one complex set-point per controllable slot and bus phase.
"""
from __future__ import annotations

import math

import numpy as np

from ..lp.model import EQ, LE, CExpr, LpModel, csum
from ..pdn import FixedLinearizationParams, Pdn, as_per_unit, phase_index


def polygon_halfplanes(s_max: float, n_faces: int = 12) -> list[tuple[float, float, float]]:
    """Half-planes ``a*p + b*q <= r`` of the regular polygon inscribed in ``|s| <= s_max``.

    Face normals sit at ``(2k+1)*pi/n``, so the polygon vertices lie on the
    circle at angles ``2k*pi/n``.
    """
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    if n_faces < 3:
        raise ValueError("a polygon needs at least three faces")
    rhs = s_max * math.cos(math.pi / n_faces)
    out = []
    for k in range(n_faces):
        phi = (2 * k + 1) * math.pi / n_faces
        out.append((math.cos(phi), math.sin(phi), rhs))
    return out


# -- variable names ---------------------------------------------------------------

def v_name(d, bus, t, i, j, part="re") -> str:
    return f"{d}:V:{bus}:{t}:{i}{j}:{part}"


def lam_name(d, link_key, t, p, part) -> str:
    return f"{d}:L:{link_key}:{t}:{p}:{part}"


def s0_name(d, t, p, part) -> str:
    return f"{d}:s0:{t}:{p}:{part}"


def slot_name(d, slot_id, t, p, part) -> str:
    return f"{d}:sc:{slot_id}:{t}:{p}:{part}"


def bfm_variable_count(pdn: Pdn, n_t: int | None = None) -> int:
    n_t = pdn.n_t if n_t is None else n_t
    per_t = sum(len(b.phases) ** 2 for b in pdn.buses)
    per_t += 2 * sum(len(l.phases) for l in pdn.links)
    per_t += 2 * len(pdn.bus(pdn.reference).phases)
    per_t += 2 * sum(len(pdn.bus(s.bus).phases) for s in pdn.slots)
    return n_t * per_t


def _v_entry(d, bus, t, phases, i, j) -> CExpr:
    """Entry (i, j) of the Hermitian matrix V (positions within ``phases``)."""
    pi, pj = phases[i], phases[j]
    if i == j:
        return CExpr.var(v_name(d, bus, t, pi, pi))
    if i < j:
        return CExpr.var(v_name(d, bus, t, pi, pj, "re"), v_name(d, bus, t, pi, pj, "im"))
    return CExpr.var(v_name(d, bus, t, pj, pi, "re"), v_name(d, bus, t, pj, pi, "im"), -1.0)


def _add_complex_row(lp: LpModel, name: str, expr: CExpr, real_only: bool = False):
    """Row ``expr == 0`` split into real and imaginary parts."""
    lp.add_constraint(name + ":re", expr.re, EQ, -expr.const.real)
    if not real_only:
        lp.add_constraint(name + ":im", expr.im, EQ, -expr.const.imag)


def emit_bfm_lp(pdn: Pdn, params: FixedLinearizationParams, horizon=None,
                n_faces: int = 12, rating: bool = True, voltage_limits: bool = True) -> LpModel:
    """BFM-LP rows and variables for ``pdn`` over ``horizon`` (default all steps).

    ``rating=False`` / ``voltage_limits=False`` drop the substation polygon and
    the squared-voltage bounds (used for relaxed comparisons).
    """
    pdn = as_per_unit(pdn)
    steps = list(range(pdn.n_t)) if horizon is None else list(horizon)
    if len(params.gamma) != len(pdn.links) or len(params.ell) != len(pdn.links):
        raise ValueError(f"linearization parameters cover {len(params.gamma)} links, "
                         f"network {pdn.name!r} has {len(pdn.links)}")
    for k, ln in enumerate(pdn.links):
        m = len(ln.phases)
        for arr in (params.gamma[k], params.ell[k]):
            if arr.shape[1:] != (m, m):
                raise ValueError(f"link {ln.key}: parameter shape {arr.shape[1:]} does not match "
                                 f"its {m} phases")
            if arr.shape[0] not in (1, pdn.n_t):
                raise ValueError(f"link {ln.key}: parameters cover {arr.shape[0]} steps, "
                                 f"need 1 or {pdn.n_t}")
    d = pdn.name
    lp = LpModel(f"bfm-{d}")
    lp.meta["pdn"] = d
    ref = pdn.bus(pdn.reference)
    ref_ph = ref.phases
    up = {ln.to_bus: (k, ln) for k, ln in enumerate(pdn.links)}
    down: dict = {b.id: [] for b in pdn.buses}
    for k, ln in enumerate(pdn.links):
        down[ln.from_bus].append((k, ln))
    slots_at: dict = {}
    for s in pdn.slots:
        slots_at.setdefault(s.bus, []).append(s)
    halfplanes = polygon_halfplanes(pdn.rating, n_faces) if rating and math.isfinite(pdn.rating) \
        else []

    for t in steps:
        # variables
        for b in pdn.buses:
            ph = b.phases
            lo, hi = pdn.bounds_for(b.id)
            for i, pi in enumerate(ph):
                for j in range(i, len(ph)):
                    pj = ph[j]
                    if i == j:
                        if voltage_limits and b.id != pdn.reference:
                            lp.add_variable(v_name(d, b.id, t, pi, pi), max(0.0, lo) ** 2, hi ** 2)
                        else:
                            lp.add_variable(v_name(d, b.id, t, pi, pi), 0.0)
                    else:
                        lp.add_variable(v_name(d, b.id, t, pi, pj, "re"), -math.inf)
                        lp.add_variable(v_name(d, b.id, t, pi, pj, "im"), -math.inf)
        for ln in pdn.links:
            for p in ln.phases:
                lp.add_variable(lam_name(d, ln.key, t, p, "re"), -math.inf)
                lp.add_variable(lam_name(d, ln.key, t, p, "im"), -math.inf)
        for p in ref_ph:
            lp.add_variable(s0_name(d, t, p, "re"), -math.inf)
            lp.add_variable(s0_name(d, t, p, "im"), -math.inf)
        for s in pdn.slots:
            for k, p in enumerate(pdn.bus(s.bus).phases):
                kk = k if s.p_min.shape[0] > 1 else 0
                lp.add_variable(slot_name(d, s.id, t, p, "re"), s.p_min[kk], s.p_max[kk])
                lp.add_variable(slot_name(d, s.id, t, p, "im"), s.q_min[kk], s.q_max[kk])

        # reference voltage pinned
        vr = pdn.v_ref[t]
        outer = np.outer(vr, vr.conj())
        for i, pi in enumerate(ref_ph):
            for j in range(i, len(ref_ph)):
                pj = ref_ph[j]
                if i == j:
                    lp.add_constraint(f"{d}:pin:{t}:{pi}{pi}", {v_name(d, ref.id, t, pi, pi): 1.0},
                                      EQ, outer[i, i].real)
                else:
                    lp.add_constraint(f"{d}:pin:{t}:{pi}{pj}:re",
                                      {v_name(d, ref.id, t, pi, pj, "re"): 1.0}, EQ, outer[i, j].real)
                    lp.add_constraint(f"{d}:pin:{t}:{pi}{pj}:im",
                                      {v_name(d, ref.id, t, pi, pj, "im"): 1.0}, EQ, outer[i, j].imag)

        # nodal balance
        for b in pdn.buses:
            ph = b.phases
            unc = pdn.load(b.id)[t]
            for i, p in enumerate(ph):
                e = CExpr()
                if b.id in up:
                    k, ln = up[b.id]
                    if p in ln.phases:
                        q = ln.phases.index(p)
                        _, ell = params.at(k, t)
                        e += CExpr.var(lam_name(d, ln.key, t, p, "re"), lam_name(d, ln.key, t, p, "im"))
                        e -= complex((ln.z @ ell)[q, q])
                # shunt: diag(V Y^H)_i = sum_j V_ij conj(Y_ij)
                for j in range(len(ph)):
                    y = b.shunt[i, j]
                    if y != 0:
                        e -= _v_entry(d, b.id, t, ph, i, j).scale(np.conj(y))
                if b.id == pdn.reference:
                    e += CExpr.var(s0_name(d, t, p, "re"), s0_name(d, t, p, "im"))
                else:
                    e -= complex(unc[i])
                    for s in slots_at.get(b.id, []):
                        e -= CExpr.var(slot_name(d, s.id, t, p, "re"), slot_name(d, s.id, t, p, "im"))
                for k, ln in down[b.id]:
                    if p in ln.phases:
                        e -= CExpr.var(lam_name(d, ln.key, t, p, "re"), lam_name(d, ln.key, t, p, "im"))
                _add_complex_row(lp, f"{d}:bal:{b.id}:{t}:{p}", e)

        # voltage drop along links
        for k, ln in enumerate(pdn.links):
            gamma, ell = params.at(k, t)
            z = ln.z
            lph = ln.phases
            m = len(lph)
            a_ph = pdn.bus(ln.from_bus).phases
            b_ph = pdn.bus(ln.to_bus).phases
            ia = [a_ph.index(p) for p in lph]
            ib = [b_ph.index(p) for p in lph]
            lam = [CExpr.var(lam_name(d, ln.key, t, p, "re"), lam_name(d, ln.key, t, p, "im"))
                   for p in lph]
            zlz = z @ ell @ z.conj().T
            # A = Gamma diag(Lambda) Z^H, A_ij = sum_k Gamma_ik Lambda_k conj(Z_jk)
            A = [[csum(lam[q].scale(gamma[i, q] * np.conj(z[j, q])) for q in range(m))
                  for j in range(m)] for i in range(m)]
            for i in range(m):
                for j in range(i, m):
                    e = _v_entry(d, ln.to_bus, t, b_ph, ib[i], ib[j])
                    e -= _v_entry(d, ln.from_bus, t, a_ph, ia[i], ia[j])
                    e += A[i][j] + A[j][i].conj()
                    e -= complex(zlz[i, j])
                    _add_complex_row(lp, f"{d}:drop:{ln.key}:{t}:{lph[i]}{lph[j]}", e,
                                     real_only=(i == j))

        # substation rating on the summed injection
        if halfplanes:
            for f, (cp, cq, r) in enumerate(halfplanes):
                terms = {}
                for p in ref_ph:
                    terms[s0_name(d, t, p, "re")] = cp
                    terms[s0_name(d, t, p, "im")] = cq
                lp.add_constraint(f"{d}:rating:{t}:{f}", terms, LE, r)
    return lp


# -- reading results back -------------------------------------------------------------

def surrogate_voltages(pdn: Pdn, values, t: int) -> dict:
    """Voltage magnitudes ``sqrt(diag V)`` per bus predicted by a solved BFM-LP."""
    out = {}
    for b in pdn.buses:
        out[b.id] = np.sqrt(np.maximum([values[v_name(pdn.name, b.id, t, p, p)] for p in b.phases],
                                       0.0))
    return out


def surrogate_injection(pdn: Pdn, values, t: int) -> np.ndarray:
    """Per-phase reference injection ``s0`` (p.u.) at step ``t``."""
    ph = pdn.bus(pdn.reference).phases
    return np.array([values[s0_name(pdn.name, t, p, "re")] + 1j * values[s0_name(pdn.name, t, p, "im")]
                     for p in ph])


def slot_setpoints(pdn: Pdn, values, steps=None) -> dict:
    """Controllable-load series ``(n_t, |phases|)`` (p.u.) per slot from a solved LP."""
    steps = range(pdn.n_t) if steps is None else steps
    out = {}
    for s in pdn.slots:
        ph = pdn.bus(s.bus).phases
        arr = np.zeros((pdn.n_t, len(ph)), dtype=complex)
        for t in steps:
            for k, p in enumerate(ph):
                arr[t, k] = values[slot_name(pdn.name, s.id, t, p, "re")] + \
                    1j * values[slot_name(pdn.name, s.id, t, p, "im")]
        out[s.id] = arr
    return out


def exact_point(pdn: Pdn, solutions, slot_loads=None) -> dict:
    """LP variable values implied by exact power-flow solutions (per-unit network).

    Useful to check how well the linear rows fit the exact physics.
    """
    pdn = as_per_unit(pdn)
    d = pdn.name
    idx = pdn.bus_index()
    vals = {}
    for sol in solutions:
        t = sol.t
        for b in pdn.buses:
            ph = b.phases
            vb = sol.v[idx[b.id], phase_index(ph)]
            V = np.outer(vb, vb.conj())
            for i, pi in enumerate(ph):
                for j in range(i, len(ph)):
                    pj = ph[j]
                    if i == j:
                        vals[v_name(d, b.id, t, pi, pi)] = V[i, i].real
                    else:
                        vals[v_name(d, b.id, t, pi, pj, "re")] = V[i, j].real
                        vals[v_name(d, b.id, t, pi, pj, "im")] = V[i, j].imag
        for ln in pdn.links:
            a, b = idx[ln.from_bus], idx[ln.to_bus]
            for p in ln.phases:
                q = "abc".index(p)
                lam = sol.v[a, q] * np.conj(sol.i[b, q])
                vals[lam_name(d, ln.key, t, p, "re")] = lam.real
                vals[lam_name(d, ln.key, t, p, "im")] = lam.imag
        for k, p in enumerate(pdn.bus(pdn.reference).phases):
            s0 = sol.s0["abc".index(p)]
            vals[s0_name(d, t, p, "re")] = s0.real
            vals[s0_name(d, t, p, "im")] = s0.imag
        for s in pdn.slots:
            for k, p in enumerate(pdn.bus(s.bus).phases):
                sc = 0j if slot_loads is None or s.id not in slot_loads else slot_loads[s.id][t, k]
                vals[slot_name(d, s.id, t, p, "re")] = sc.real
                vals[slot_name(d, s.id, t, p, "im")] = sc.imag
    return vals
