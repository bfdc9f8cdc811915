"""Fixed-format MPS export and import.

Fixed MPS limits names to eight characters, so every row and column is
written under a mangled name (``R`` / ``C`` plus seven base-36 digits) and
the original names go to a JSON sidecar next to the MPS file. Numeric fields
are twelve characters wide; values are written with the most significant
digits that fit (at least 10 for any double in the usual range).
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

from .model import EQ, GE, LE, LpModel

OBJ_ROW = "OBJ"
_SENSE_CODE = {LE: "L", EQ: "E", GE: "G"}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}
_DIGITS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def mangle(prefix: str, k: int) -> str:
    if k >= 36 ** 7:
        raise ValueError("model too large for 8-character MPS names")
    chars = []
    for _ in range(7):
        k, r = divmod(k, 36)
        chars.append(_DIGITS[r])
    return prefix + "".join(reversed(chars))


def format_number(x: float) -> str:
    """Shortest faithful text for ``x`` that fits a 12-character field."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot write non-finite number {x}")
    if x == 0.0:
        return "0"
    s = repr(x)
    if len(s) <= 12:
        return s
    for p in range(12, 0, -1):
        s = f"{x:.{p}g}"
        if len(s) <= 12:
            return s
    raise ValueError(f"cannot fit {x} in 12 characters")


def _line(f1="", f2="", f3="", f4="", f5="", f6=""):
    head = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        head += f"   {f5:<8}  {f6:>12}"
    return head.rstrip()


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".names.json")


def name_maps(model: LpModel) -> tuple[dict[str, str], dict[str, str]]:
    cols = {n: mangle("C", k) for k, n in enumerate(model.variables)}
    rows = {n: mangle("R", k) for k, n in enumerate(model.constraints)}
    return cols, rows


def export_mps(model: LpModel, destination, write_names: bool = True) -> Path:
    """Write ``model`` as fixed-format MPS; returns the path written.

    Row and column order follow model insertion order, so identical models
    produce byte-identical files.
    """
    destination = Path(destination)
    cols, rows = name_maps(model)
    col_entries: dict[str, list[tuple[str, float]]] = {n: [] for n in model.variables}
    for cname, con in model.constraints.items():
        r = rows[cname]
        for var, coef in con.terms.items():
            col_entries[var].append((r, coef))

    out = [f"NAME          {_safe_name(model.name)}", "ROWS", f" N  {OBJ_ROW}"]
    for cname, con in model.constraints.items():
        out.append(f" {_SENSE_CODE[con.sense]}  {rows[cname]}")
    out.append("COLUMNS")
    for vname, var in model.variables.items():
        c = cols[vname]
        entries = []
        if var.obj != 0.0 or not col_entries[vname]:
            entries.append((OBJ_ROW, var.obj))
        entries.extend(col_entries[vname])
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            if len(pair) == 2:
                out.append(_line("", c, pair[0][0], format_number(pair[0][1]),
                                 pair[1][0], format_number(pair[1][1])))
            else:
                out.append(_line("", c, pair[0][0], format_number(pair[0][1])))
    out.append("RHS")
    rhs = [(rows[n], con.rhs) for n, con in model.constraints.items() if con.rhs != 0.0]
    for k in range(0, len(rhs), 2):
        pair = rhs[k:k + 2]
        if len(pair) == 2:
            out.append(_line("", "RHS", pair[0][0], format_number(pair[0][1]),
                             pair[1][0], format_number(pair[1][1])))
        else:
            out.append(_line("", "RHS", pair[0][0], format_number(pair[0][1])))
    out.append("BOUNDS")
    for vname, var in model.variables.items():
        out.extend(_bound_lines(cols[vname], var.lb, var.ub))
    out.append("ENDATA")

    tmp = destination.with_name(destination.name + ".tmp")
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(out))
        fh.write("\n")
    os.replace(tmp, destination)
    if write_names:
        mapping = {
            "model": model.name,
            "objective": OBJ_ROW,
            "columns": {m: n for n, m in cols.items()},
            "rows": {m: n for n, m in rows.items()},
        }
        with open(sidecar_path(destination), "w", encoding="utf-8") as fh:
            json.dump(mapping, fh, indent=0, sort_keys=False)
    return destination


def _safe_name(name: str) -> str:
    clean = "".join(ch if ch.isalnum() or ch in "_-" else "_" for ch in name)
    return (clean or "MODEL")[:8]


def _bound_lines(col, lb, ub):
    if lb == ub:
        return [_line("FX", "BND", col, format_number(lb))]
    if lb == -math.inf and ub == math.inf:
        return [_line("FR", "BND", col)]
    lines = []
    if lb == -math.inf:
        lines.append(_line("MI", "BND", col))
    elif lb != 0.0:
        lines.append(_line("LO", "BND", col, format_number(lb)))
    if ub != math.inf:
        lines.append(_line("UP", "BND", col, format_number(ub)))
    return lines


def import_mps(path, names=None) -> LpModel:
    """Read an MPS file (fixed or free layout with blank-free names).

    ``names`` is the sidecar mapping (dict or path). When omitted, the
    sidecar next to ``path`` is used if present; otherwise mangled names
    are kept.
    """
    path = Path(path)
    if names is None and sidecar_path(path).exists():
        names = sidecar_path(path)
    if isinstance(names, (str, os.PathLike)):
        with open(names, encoding="utf-8") as fh:
            names = json.load(fh)
    colmap = (names or {}).get("columns", {})
    rowmap = (names or {}).get("rows", {})

    model_name = "model"
    obj_row = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    obj: dict[str, float] = {}
    terms: dict[str, dict[str, float]] = {}
    rhs: dict[str, float] = {}
    lb: dict[str, float] = {}
    ub: dict[str, float] = {}
    section = None
    with open(path, encoding="ascii") as fh:
        for raw in fh:
            if not raw.strip() or raw.startswith("*"):
                continue
            if not raw[0].isspace():
                parts = raw.split()
                section = parts[0].upper()
                if section == "NAME" and len(parts) > 1:
                    model_name = parts[1]
                if section == "ENDATA":
                    break
                continue
            tok = raw.split()
            if section == "ROWS":
                code, r = tok[0].upper(), tok[1]
                if code == "N":
                    if obj_row is None:
                        obj_row = r
                    continue
                row_sense[r] = _CODE_SENSE[code]
                row_order.append(r)
                terms[r] = {}
            elif section == "COLUMNS":
                if "'MARKER'" in tok:
                    raise ValueError("integer markers are not supported")
                c = tok[0]
                if not col_order or col_order[-1] != c:
                    if c in obj:
                        raise ValueError(f"column {c} is not contiguous")
                    col_order.append(c)
                    obj[c] = 0.0
                    lb[c], ub[c] = 0.0, math.inf
                for r, val in zip(tok[1::2], tok[2::2]):
                    v = float(val)
                    if r == obj_row:
                        obj[c] += v
                    else:
                        terms[r][c] = terms[r].get(c, 0.0) + v
            elif section == "RHS":
                body = tok[1:] if len(tok) % 2 == 1 else tok
                for r, val in zip(body[0::2], body[1::2]):
                    if r != obj_row:
                        rhs[r] = float(val)
            elif section == "BOUNDS":
                code, c = tok[0].upper(), tok[2]
                val = float(tok[3]) if len(tok) > 3 else None
                if code == "UP":
                    ub[c] = val
                elif code == "LO":
                    lb[c] = val
                elif code == "FX":
                    lb[c] = ub[c] = val
                elif code == "FR":
                    lb[c], ub[c] = -math.inf, math.inf
                elif code == "MI":
                    lb[c] = -math.inf
                elif code == "PL":
                    ub[c] = math.inf
                else:
                    raise ValueError(f"unsupported bound type {code}")
            elif section in ("RANGES",):
                raise ValueError("RANGES section is not supported")

    model = LpModel(names.get("model", model_name) if names else model_name)
    for c in col_order:
        model.add_variable(colmap.get(c, c), lb[c], ub[c], obj[c])
    for r in row_order:
        model.add_constraint(rowmap.get(r, r), {colmap.get(c, c): v for c, v in terms[r].items()},
                             row_sense[r], rhs.get(r, 0.0))
    return model
