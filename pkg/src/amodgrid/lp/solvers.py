"""Solver adapters.

An adapter is any object with a ``name`` attribute and a
``solve(model) -> LpSolution`` method. Two are provided:

* :class:`HighsAdapter` calls HiGHS in-process through ``scipy.optimize.linprog``.
* :class:`MpsCommandAdapter` writes the model as fixed MPS, runs an external
  solver process and parses its solution file. It uses a CBC binary when one
  is found and otherwise the bundled ``python -m amodgrid.lp.mps_solve``
  helper, so it works on any machine with this package installed.
"""
from __future__ import annotations

import importlib.util
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from ..errors import FeasibilityError, SolverError
from .audit import check_feasibility
from .model import EQ, GE, INFEASIBLE, LE, LIMIT, OPTIMAL, UNBOUNDED, LpModel, LpSolution
from .mps import export_mps, name_maps

log = logging.getLogger(__name__)

_LINPROG_STATUS = {0: OPTIMAL, 1: LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}


class HighsAdapter:
    name = "highs"

    def __init__(self, time_limit: float | None = None, feasibility_tol: float = 1e-9,
                 method: str = "highs"):
        self.time_limit = time_limit
        self.feasibility_tol = feasibility_tol
        self.method = method

    def solve(self, model: LpModel) -> LpSolution:
        arr = model.to_arrays()
        A = arr.A
        le = arr.senses == LE
        ge = arr.senses == GE
        eq = arr.senses == EQ
        ub_rows = le | ge
        sign = np.where(ge, -1.0, 1.0)
        A_ub = (A[ub_rows].multiply(sign[ub_rows][:, None])).tocsr() if ub_rows.any() else None
        b_ub = (arr.rhs * sign)[ub_rows] if ub_rows.any() else None
        A_eq = A[eq] if eq.any() else None
        b_eq = arr.rhs[eq] if eq.any() else None
        options = {
            "presolve": True,
            "primal_feasibility_tolerance": self.feasibility_tol,
            "dual_feasibility_tolerance": self.feasibility_tol,
        }
        if self.time_limit is not None:
            options["time_limit"] = float(self.time_limit)
        bounds = np.column_stack([arr.lb, arr.ub]) if len(arr.names) else None
        start = time.perf_counter()
        if not len(arr.names):
            return LpSolution(OPTIMAL, {}, 0.0, {"solver": self.name})
        res = linprog(arr.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                      method=self.method, options=options)
        elapsed = time.perf_counter() - start
        meta = {"solver": self.name, "message": res.message, "seconds": elapsed,
                "iterations": int(getattr(res, "nit", 0) or 0)}
        status = _LINPROG_STATUS.get(res.status)
        if status is None:
            raise SolverError(f"HiGHS failed: {res.message}")
        if status != OPTIMAL:
            return LpSolution(status, None, None, meta)
        values = dict(zip(arr.names, res.x.tolist()))
        return LpSolution(OPTIMAL, values, float(res.fun), meta)


def find_cbc() -> str | None:
    """Locate a CBC executable: $AMODGRID_CBC, PATH, or the copy bundled with PuLP."""
    env = os.environ.get("AMODGRID_CBC")
    if env and Path(env).exists():
        return env
    found = shutil.which("cbc")
    if found:
        return found
    spec = importlib.util.find_spec("pulp")
    if spec and spec.origin:
        base = Path(spec.origin).parent / "solverdir" / "cbc"
        for sub in ("linux/i64", "linux/64", "linux/arm64", "osx/64", "osx/i64"):
            cand = base / sub / "cbc"
            if cand.exists() and os.access(cand, os.X_OK):
                return str(cand)
    return None


class MpsCommandAdapter:
    """Reference adapter: MPS file in, plain-text solution file out.

    ``engine`` is ``"cbc"``, ``"python"`` or ``"auto"`` (CBC when available).
    """

    def __init__(self, engine: str = "auto", time_limit: float | None = None,
                 workdir: str | os.PathLike | None = None, keep_files: bool = False):
        if engine not in ("auto", "cbc", "python"):
            raise ValueError(f"unknown engine {engine!r}")
        cbc = find_cbc() if engine in ("auto", "cbc") else None
        if engine == "cbc" and cbc is None:
            raise SolverError("no CBC executable found")
        self.engine = "cbc" if cbc else "python"
        self.cbc = cbc
        self.time_limit = time_limit
        self.workdir = workdir
        self.keep_files = keep_files
        self.name = f"mps-{self.engine}"

    def command(self, mps: Path, sol: Path) -> list[str]:
        if self.engine == "cbc":
            cmd = [self.cbc, str(mps)]
            if self.time_limit is not None:
                cmd += ["-sec", str(self.time_limit)]
            return cmd + ["-printingOptions", "all", "-solve", "-solution", str(sol)]
        cmd = [sys.executable, "-m", "amodgrid.lp.mps_solve", str(mps), str(sol)]
        if self.time_limit is not None:
            cmd += ["--time-limit", str(self.time_limit)]
        return cmd

    def solve(self, model: LpModel) -> LpSolution:
        tmp = tempfile.mkdtemp(prefix="amodgrid-lp-", dir=self.workdir)
        try:
            mps = Path(tmp) / "model.mps"
            sol = Path(tmp) / "model.sol"
            export_mps(model, mps)
            start = time.perf_counter()
            proc = subprocess.run(self.command(mps, sol), capture_output=True, text=True)
            elapsed = time.perf_counter() - start
            if not sol.exists():
                raise SolverError(f"{self.name} produced no solution file "
                                  f"(exit {proc.returncode}): {proc.stderr[-500:]}")
            cols, _ = name_maps(model)
            status, objective, raw = read_solution_file(sol)
            meta = {"solver": self.name, "seconds": elapsed, "returncode": proc.returncode}
            if status != OPTIMAL:
                return LpSolution(status, None, None, meta)
            values = {}
            for name, mangled in cols.items():
                values[name] = raw.get(mangled, raw.get(name, 0.0))
            return LpSolution(OPTIMAL, values, model.objective_value(values), meta)
        finally:
            if not self.keep_files:
                shutil.rmtree(tmp, ignore_errors=True)


def read_solution_file(path) -> tuple[str, float | None, dict[str, float]]:
    """Parse a solution file: the plain value format or CBC's ``-solution`` output.

    Plain format::

        # status: optimal
        # objective: 3.0
        x 3.0
        y 0.0
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SolverError(f"empty solution file {path}")
    if lines[0].startswith("#"):
        return _read_plain(lines)
    return _read_cbc(lines)


def _read_plain(lines):
    status, objective, values = None, None, {}
    for line in lines:
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            key = key.strip().lower()
            if key == "status":
                status = val.strip().lower()
            elif key == "objective":
                objective = float(val) if val.strip().lower() not in ("", "none") else None
            continue
        name, val = line.split()
        values[name] = float(val)
    if status not in (OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT):
        raise SolverError(f"bad status {status!r} in solution file")
    return status, objective, values


def _read_cbc(lines):
    head = lines[0].lower()
    if head.startswith("optimal"):
        status = OPTIMAL
    elif "infeasible" in head:
        status = INFEASIBLE
    elif "unbounded" in head:
        status = UNBOUNDED
    elif head.startswith("stopped"):
        status = LIMIT
    else:
        raise SolverError(f"unrecognised CBC status line: {lines[0]!r}")
    objective = None
    if "objective value" in head:
        objective = float(head.rsplit(None, 1)[-1])
    values = {}
    for line in lines[1:]:
        tok = line.split()
        if len(tok) >= 3 and tok[0] == "**":
            tok = tok[1:]
        if len(tok) >= 3 and tok[1].startswith("C"):
            values[tok[1]] = float(tok[2])
    return status, objective, values


ADAPTERS = {
    "highs": HighsAdapter,
    "highs-ipm": lambda **kw: HighsAdapter(method="highs-ipm", **kw),
    "mps": MpsCommandAdapter,
    "mps-cbc": lambda **kw: MpsCommandAdapter(engine="cbc", **kw),
    "mps-python": lambda **kw: MpsCommandAdapter(engine="python", **kw),
}


def make_adapter(name: str = "highs", **kwargs):
    try:
        factory = ADAPTERS[name]
    except KeyError:
        raise SolverError(f"unknown solver {name!r}; choose from {sorted(ADAPTERS)}") from None
    return factory(**kwargs)


def solve(model: LpModel, adapter=None, audit_tol: float | None = 1e-6) -> LpSolution:
    """Solve ``model`` and audit an optimal answer before returning it."""
    adapter = adapter or HighsAdapter()
    problems = model.check()
    if problems:
        raise SolverError("malformed model: " + "; ".join(problems[:3]))
    solution = adapter.solve(model)
    if solution.optimal and audit_tol is not None:
        report = check_feasibility(model, solution, audit_tol)
        solution.meta["max_residual"] = report.max_residual
        solution.meta["max_bound_violation"] = report.max_bound_violation
        if not report.passed:
            worst = sorted(report.row_residuals.items(), key=lambda kv: -kv[1])[:3]
            raise FeasibilityError(f"{adapter.name} returned a solution failing the audit "
                                   f"at tol {audit_tol}: {worst or report.bound_violations}")
    log.debug("solved %s with %s: %s", model.name, adapter.name, solution.status)
    return solution
