"""Stand-alone MPS solver process used by :class:`MpsCommandAdapter`.

Usage: ``python -m amodgrid.lp.mps_solve MODEL.mps SOLUTION.txt [--time-limit S]``

Reads the MPS file with mangled names (no sidecar), solves it with HiGHS and
writes the plain value format understood by ``read_solution_file``.
"""
import argparse
import sys

from .mps import import_mps
from .solvers import HighsAdapter


def main(argv=None):
    ap = argparse.ArgumentParser(prog="amodgrid.lp.mps_solve")
    ap.add_argument("mps")
    ap.add_argument("solution")
    ap.add_argument("--time-limit", type=float, default=None)
    args = ap.parse_args(argv)
    model = import_mps(args.mps, names={})
    sol = HighsAdapter(time_limit=args.time_limit).solve(model)
    with open(args.solution, "w", encoding="utf-8") as fh:
        fh.write(f"# status: {sol.status}\n")
        fh.write(f"# objective: {sol.objective!r}\n")
        if sol.optimal:
            for name, value in sol.values.items():
                fh.write(f"{name} {value!r}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
