from .audit import ResidualReport, check_feasibility
from .model import (EQ, GE, INFEASIBLE, LE, LIMIT, OPTIMAL, UNBOUNDED, CExpr, LpModel,
                    LpSolution, csum)
from .mps import export_mps, import_mps
from .solvers import HighsAdapter, MpsCommandAdapter, make_adapter, solve

LpFragment = LpModel

__all__ = [
    "EQ", "GE", "LE", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "LIMIT",
    "CExpr", "csum", "LpModel", "LpFragment", "LpSolution", "ResidualReport",
    "check_feasibility", "export_mps", "import_mps", "HighsAdapter",
    "MpsCommandAdapter", "make_adapter", "solve",
]
