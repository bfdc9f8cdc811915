"""Feasibility audit of LP solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EQ, GE, LE, LpModel, LpSolution


@dataclass
class ResidualReport:
    tol: float
    max_residual: float
    max_bound_violation: float
    row_residuals: dict[str, float] = field(default_factory=dict)
    bound_violations: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.row_residuals and not self.bound_violations

    @property
    def flagged_rows(self) -> list[str]:
        return list(self.row_residuals)


def row_residuals(model: LpModel, values) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Scaled violation of every row: (names, violation >= 0, row scale).

    Rows are scaled by ``max(1, max |coef|)``; an equality row's violation is
    ``|lhs - rhs|``, an inequality's is the amount it is exceeded.
    """
    arr = model.to_arrays()
    x = np.array([values[n] for n in arr.names], dtype=float)
    lhs = arr.A @ x
    diff = lhs - arr.rhs
    viol = np.zeros_like(diff)
    eq = arr.senses == EQ
    le = arr.senses == LE
    ge = arr.senses == GE
    viol[eq] = np.abs(diff[eq])
    viol[le] = np.maximum(diff[le], 0.0)
    viol[ge] = np.maximum(-diff[ge], 0.0)
    if arr.A.nnz:
        absA = abs(arr.A)
        scale = np.maximum(1.0, absA.max(axis=1).toarray().ravel())
    else:
        scale = np.ones(len(diff))
    return arr.row_names, viol / scale, scale


def check_feasibility(model: LpModel, solution: LpSolution | dict, tol: float = 1e-6) -> ResidualReport:
    values = solution.values if isinstance(solution, LpSolution) else solution
    if values is None:
        raise ValueError("solution carries no values")
    names, viol, _ = row_residuals(model, values)
    rows = {n: float(v) for n, v in zip(names, viol) if v > tol}
    bounds = {}
    max_bound = 0.0
    for n, var in model.variables.items():
        x = values[n]
        b = max(var.lb - x, x - var.ub, 0.0)
        max_bound = max(max_bound, b)
        if b > tol:
            bounds[n] = b
    return ResidualReport(tol, float(viol.max()) if len(viol) else 0.0, max_bound, rows, bounds)
