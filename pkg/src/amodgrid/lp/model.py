"""Solver-agnostic sparse linear program.

Variables and constraints are addressed by unique names. A model built by
one module can reference variables owned by another module by name; the
references are resolved when fragments are merged into a full model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "<=", "=", ">="
SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"
STATUSES = (OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT)


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    obj: float = 0.0


@dataclass
class Constraint:
    name: str
    terms: dict[str, float]
    sense: str
    rhs: float


class LpModel:
    """Minimization LP with named variables and rows.

    The same class serves as a *fragment*: constraint terms may name
    variables the fragment does not declare, as long as they exist once all
    fragments are merged (see :meth:`absorb` and :meth:`check`).
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: dict[str, Variable] = {}
        self.constraints: dict[str, Constraint] = {}
        self.meta: dict = {}

    # -- building -----------------------------------------------------------

    def add_variable(self, name: str, lb: float = 0.0, ub: float = math.inf,
                     obj: float = 0.0) -> str:
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        lb = float(lb)
        ub = float(ub)
        if lb > ub:
            raise ValueError(f"variable {name!r}: lb {lb} > ub {ub}")
        if not math.isfinite(obj):
            raise ValueError(f"variable {name!r}: non-finite objective")
        self.variables[name] = Variable(name, lb, ub, float(obj))
        return name

    def add_constraint(self, name: str, terms: Mapping[str, float], sense: str,
                       rhs: float = 0.0) -> str:
        if name in self.constraints:
            raise ValueError(f"duplicate constraint {name!r}")
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        clean = {}
        for var, coef in terms.items():
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError(f"constraint {name!r}: non-finite coefficient on {var!r}")
            if coef != 0.0:
                clean[var] = clean.get(var, 0.0) + coef
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r}: non-finite rhs")
        self.constraints[name] = Constraint(name, clean, sense, rhs)
        return name

    def add_objective(self, terms: Mapping[str, float]) -> None:
        for var, coef in terms.items():
            self.variables[var].obj += float(coef)

    def absorb(self, fragment: "LpModel") -> None:
        """Merge another fragment in; names must not collide."""
        clash = self.variables.keys() & fragment.variables.keys()
        if clash:
            raise ValueError(f"variable name collision: {sorted(clash)[:5]}")
        clash = self.constraints.keys() & fragment.constraints.keys()
        if clash:
            raise ValueError(f"constraint name collision: {sorted(clash)[:5]}")
        self.variables.update(fragment.variables)
        self.constraints.update(fragment.constraints)

    def check(self) -> list[str]:
        """Return problems that would make the model unusable (dangling refs, bad bounds)."""
        problems = []
        for con in self.constraints.values():
            for var in con.terms:
                if var not in self.variables:
                    problems.append(f"constraint {con.name!r} references unknown variable {var!r}")
        for var in self.variables.values():
            if var.lb > var.ub:
                problems.append(f"variable {var.name!r} has lb > ub")
        return problems

    # -- views --------------------------------------------------------------

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def variable_names(self) -> list[str]:
        return list(self.variables)

    def constraint_names(self) -> list[str]:
        return list(self.constraints)

    def to_arrays(self) -> "LpArrays":
        """Compile to index-based sparse arrays (row order = insertion order)."""
        problems = self.check()
        if problems:
            raise ValueError("; ".join(problems[:5]))
        names = list(self.variables)
        index = {n: k for k, n in enumerate(names)}
        lb = np.array([v.lb for v in self.variables.values()], dtype=float)
        ub = np.array([v.ub for v in self.variables.values()], dtype=float)
        c = np.array([v.obj for v in self.variables.values()], dtype=float)
        rows, cols, vals = [], [], []
        senses, rhs = [], []
        for r, con in enumerate(self.constraints.values()):
            for var, coef in con.terms.items():
                rows.append(r)
                cols.append(index[var])
                vals.append(coef)
            senses.append(con.sense)
            rhs.append(con.rhs)
        A = sp.csr_matrix((np.array(vals, dtype=float), (np.array(rows, dtype=np.int64),
                           np.array(cols, dtype=np.int64))),
                          shape=(len(self.constraints), len(names)))
        return LpArrays(names, list(self.constraints), c, A, np.array(senses, dtype=object),
                        np.array(rhs, dtype=float), lb, ub)

    def objective_value(self, values: Mapping[str, float]) -> float:
        return float(sum(v.obj * values.get(n, 0.0) for n, v in self.variables.items()))

    def structurally_equal(self, other: "LpModel", rel_tol: float = 0.0) -> bool:
        return not self.differences(other, rel_tol)

    def differences(self, other: "LpModel", rel_tol: float = 0.0) -> list[str]:
        """List structural differences (names, senses, bounds, coefficients)."""
        def close(a, b):
            if a == b:
                return True
            if math.isinf(a) or math.isinf(b):
                return False
            return abs(a - b) <= rel_tol * max(abs(a), abs(b))

        out = []
        if list(self.variables) != list(other.variables):
            out.append("variable names/order differ")
            return out
        if list(self.constraints) != list(other.constraints):
            out.append("constraint names/order differ")
            return out
        for n, v in self.variables.items():
            w = other.variables[n]
            if not (close(v.lb, w.lb) and close(v.ub, w.ub) and close(v.obj, w.obj)):
                out.append(f"variable {n!r}: {v} != {w}")
        for n, con in self.constraints.items():
            o = other.constraints[n]
            if con.sense != o.sense or not close(con.rhs, o.rhs):
                out.append(f"row {n!r}: sense/rhs differ")
            elif con.terms.keys() != o.terms.keys():
                out.append(f"row {n!r}: sparsity differs")
            elif not all(close(c, o.terms[k]) for k, c in con.terms.items()):
                out.append(f"row {n!r}: coefficients differ")
        return out


@dataclass
class LpArrays:
    names: list[str]
    row_names: list[str]
    c: np.ndarray
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray


@dataclass
class LpSolution:
    status: str
    values: dict[str, float] | None = None
    objective: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if (self.values is not None) != (self.status == OPTIMAL):
            raise ValueError("values must be present iff status is optimal")

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def get(self, name: str, default: float = 0.0) -> float:
        return self.values.get(name, default)

    def array(self, names: Iterable[str]) -> np.ndarray:
        return np.array([self.values[n] for n in names], dtype=float)


class CExpr:
    """Complex-valued linear expression over real LP variables.

    Kept as two real expressions (real and imaginary part) plus a complex
    constant. Only the operations the power-flow surrogate needs are here.
    """

    __slots__ = ("re", "im", "const")

    def __init__(self, re=None, im=None, const=0j):
        self.re = dict(re or {})
        self.im = dict(im or {})
        self.const = complex(const)

    @classmethod
    def var(cls, re_name: str | None, im_name: str | None = None, im_sign: float = 1.0):
        return cls({re_name: 1.0} if re_name else {}, {im_name: im_sign} if im_name else {})

    @classmethod
    def constant(cls, value: complex):
        return cls(const=value)

    def copy(self):
        return CExpr(self.re, self.im, self.const)

    def __add__(self, other):
        out = self.copy()
        out += other
        return out

    def __iadd__(self, other):
        if isinstance(other, CExpr):
            for k, v in other.re.items():
                self.re[k] = self.re.get(k, 0.0) + v
            for k, v in other.im.items():
                self.im[k] = self.im.get(k, 0.0) + v
            self.const += other.const
        else:
            self.const += complex(other)
        return self

    def __neg__(self):
        return CExpr({k: -v for k, v in self.re.items()}, {k: -v for k, v in self.im.items()},
                     -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, CExpr) else -complex(other))

    def scale(self, a: complex) -> "CExpr":
        """Multiply by complex constant: (a_r + j a_i)(x_r + j x_i)."""
        a = complex(a)
        ar, ai = a.real, a.imag
        re, im = {}, {}
        for k, v in self.re.items():
            if ar:
                re[k] = re.get(k, 0.0) + ar * v
            if ai:
                im[k] = im.get(k, 0.0) + ai * v
        for k, v in self.im.items():
            if ai:
                re[k] = re.get(k, 0.0) - ai * v
            if ar:
                im[k] = im.get(k, 0.0) + ar * v
        return CExpr(re, im, a * self.const)

    def conj(self) -> "CExpr":
        return CExpr(self.re, {k: -v for k, v in self.im.items()}, self.const.conjugate())


def csum(exprs: Iterable[CExpr]) -> CExpr:
    out = CExpr()
    for e in exprs:
        out += e
    return out
