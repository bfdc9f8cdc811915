"""Command-line front end.

    amodgrid validate SCENARIO
    amodgrid run --mode {base,uncoordinated,coordinated} --scenario F --out D [--solver NAME] [--seed N]

Exit codes: 0 success, 2 invalid scenario, 3 infeasible LP, 4 solver error,
5 power-flow non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import AmodGridError
from .lp.solvers import ADAPTERS
from .pipeline import MODES, run_scenario
from .scenario import load_scenario, validate_scenario

log = logging.getLogger("amodgrid")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amodgrid",
                                description="Joint fleet and distribution-grid optimization.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a scenario and print model sizes")
    v.add_argument("scenario")
    r = sub.add_parser("run", help="run one mode and write reports")
    r.add_argument("--mode", choices=MODES, required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--solver", choices=sorted(ADAPTERS), default=None)
    r.add_argument("--seed", type=int, default=None,
                   help="seed for the random charger-to-bus assignment")
    return p


def cmd_validate(args) -> int:
    diag = validate_scenario(args.scenario)
    for f in diag.findings:
        print(f"error {f}")
    if not diag.ok:
        print(f"{len(diag.findings)} finding(s)")
        return 2
    print("scenario is valid")
    if diag.statistics:
        print(json.dumps({"variables": diag.statistics}, indent=2))
    return 0


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    res = run_scenario(scenario, args.mode, args.out, args.solver)
    v = res.report["violations"]
    e = res.report["energy"]
    print(f"{args.mode}: du_viol={v['du_viol_pu_h']:.6g} p.u.h  ds_viol={v['ds_viol_vah']:.6g} VAh  "
          f"voltage events={v['voltage_events']}  rating events={v['rating_events']}")
    if args.mode != "base":
        print(f"objective={res.report['objective']:.6g}  E_AMoD={e['e_amod']:.6g} kWh  "
              f"E_charge={e['e_charge']:.6g} kWh  E_losses={e['e_losses']:.6g} kWh  "
              f"fleet cost={e['total_fleet_cost']:.6g} USD")
    print(f"outputs in {args.out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_run(args)
    except AmodGridError as exc:
        print(f"error [{exc.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        for f in getattr(exc, "findings", [])[:20]:
            print(f"  {f}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
