"""Case-file ingestion: a MATPOWER ``.m`` subset and a native JSON schema.

MATPOWER columns used (1-based as in the MATPOWER manual):

* ``mpc.bus``: 1 bus_i, 5 Gs, 6 Bs, 8 Vm, 9 Va (degrees)
* ``mpc.branch``: 1 fbus, 2 tbus, 3 r, 4 x, 5 b (total line charging),
  9 ratio, 10 angle, 11 status

Bus shunts, off-nominal taps and phase shifters are not part of the model;
they are reported in :attr:`CaseFile.unsupported` and otherwise ignored.
Parallel branches are merged into one line with summed admittances.

Native JSON schema::

    {
      "name": "two-bus",                 # optional
      "base_mva": 100.0,                 # optional, informational
      "buses": [{"id": 1, "vm": 1.0, "va_deg": 0.0}, ...],   # vm/va optional
      "lines": [{"from": 1, "to": 2, "g": 1.0, "b": -2.0,
                 "shunt_g": 0.0, "shunt_b": 0.0}, ...]      # shunt_* optional
    }

``g``/``b`` are the series admittance and ``shunt_g``/``shunt_b`` the
half-shunt at each line end, all per unit.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import Bus, GridModel, Line


class ParseError(ValueError):
    def __init__(self, msg, line: int | None = None, column: int | None = None, path=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(f"{path or '<case>'}: {msg}{where}")
        self.line = line
        self.column = column


@dataclass
class CaseFile:
    name: str
    bus_ids: list[int]
    lines: list[tuple[int, int, complex, complex]]
    base_mva: float = 100.0
    vm: np.ndarray | None = None
    va_deg: np.ndarray | None = None
    unsupported: list[str] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.bus_ids)

    @property
    def E(self) -> int:
        return len(self.lines)

    def to_grid(self, convention: str = "negated") -> GridModel:
        pos = {b: k for k, b in enumerate(self.bus_ids)}
        lines = [Line(pos[f], pos[t], y, ys) for f, t, y, ys in self.lines]
        return GridModel([Bus(b) for b in self.bus_ids], lines, convention, self.name)

    def base_state(self) -> np.ndarray:
        """Rectangular base operating point; flat profile when the case has none."""
        vm = np.ones(self.N) if self.vm is None else self.vm
        va = np.zeros(self.N) if self.va_deg is None else np.deg2rad(self.va_deg)
        V = vm * np.exp(1j * va)
        return np.concatenate([V.real, V.imag])


def _merge_lines(raw, unsupported):
    merged: dict[frozenset, list] = {}
    order = []
    for f, t, y, ys in raw:
        key = frozenset((f, t))
        if key in merged:
            merged[key][2] += y
            merged[key][3] += ys
            unsupported.append(f"parallel branch {f}-{t} merged")
        else:
            merged[key] = [f, t, y, ys]
            order.append(key)
    return [tuple(merged[k]) for k in order]


_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([^\[\n;]+);")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(text: str, body: str, offset: int, path) -> np.ndarray:
    rows = []
    lineno = text.count("\n", 0, offset) + 1
    for chunk_line in body.split("\n"):
        for row in chunk_line.split(";"):
            toks = row.replace(",", " ").split()
            if not toks:
                continue
            vals = []
            for tok in toks:
                try:
                    vals.append(float(tok))
                except ValueError:
                    col = chunk_line.find(tok) + 1
                    raise ParseError(f"bad number {tok!r}", lineno, col, path) from None
            rows.append(vals)
        lineno += 1
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParseError("ragged matrix rows", text.count("\n", 0, offset) + 1, None, path)
    return np.array(rows)


def parse_matpower(text: str, path=None, name: str | None = None) -> CaseFile:
    clean = _strip_comments(text)
    blocks = {m.group(1): (m.group(2), m.start(2)) for m in _BLOCK.finditer(clean)}
    for need in ("bus", "branch"):
        if need not in blocks:
            raise ParseError(f"missing mpc.{need} matrix", path=path)
    bus = _matrix(clean, *blocks["bus"], path)
    br = _matrix(clean, *blocks["branch"], path)
    if bus.ndim != 2 or bus.shape[1] < 9:
        raise ParseError("mpc.bus needs at least 9 columns", path=path)
    if br.ndim != 2 or br.shape[1] < 5:
        raise ParseError("mpc.branch needs at least 5 columns", path=path)
    base = 100.0
    for m in _SCALAR.finditer(clean):
        if m.group(1) == "baseMVA":
            try:
                base = float(m.group(2))
            except ValueError:
                raise ParseError("bad baseMVA", clean.count("\n", 0, m.start()) + 1, path=path) from None
    unsupported = []
    ids = [int(b) for b in bus[:, 0]]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate bus ids", path=path)
    for row in bus:
        if row[4] != 0 or row[5] != 0:
            unsupported.append(f"bus {int(row[0])} shunt Gs={row[4]:g} Bs={row[5]:g} MW/MVAr ignored")
    idset = set(ids)
    raw = []
    for k, row in enumerate(br):
        f, t = int(row[0]), int(row[1])
        if f not in idset or t not in idset:
            raise ParseError(f"branch {k + 1} references unknown bus", path=path)
        if br.shape[1] >= 11 and row[10] == 0:
            unsupported.append(f"branch {f}-{t} out of service, skipped")
            continue
        if br.shape[1] >= 9 and row[8] not in (0.0, 1.0):
            unsupported.append(f"branch {f}-{t} tap ratio {row[8]:g} ignored")
        if br.shape[1] >= 10 and row[9] != 0:
            unsupported.append(f"branch {f}-{t} phase shift {row[9]:g} deg ignored")
        z = complex(row[2], row[3])
        if z == 0:
            raise ParseError(f"branch {k + 1} has zero impedance", path=path)
        raw.append((f, t, 1 / z, 0.5j * row[4]))
    lines = _merge_lines(raw, unsupported)
    return CaseFile(name=name or (Path(path).stem if path else "case"), bus_ids=ids, lines=lines,
                    base_mva=base, vm=bus[:, 7].copy(), va_deg=bus[:, 8].copy(), unsupported=unsupported)


def parse_json_case(text: str, path=None) -> CaseFile:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno, path) from None
    try:
        buses = d["buses"]
        ids = [int(b["id"]) for b in buses]
        vm = np.array([float(b.get("vm", 1.0)) for b in buses])
        va = np.array([float(b.get("va_deg", 0.0)) for b in buses])
        unsupported = []
        raw = [(int(ln["from"]), int(ln["to"]), complex(float(ln["g"]), float(ln["b"])),
                complex(float(ln.get("shunt_g", 0.0)), float(ln.get("shunt_b", 0.0))))
               for ln in d["lines"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"invalid case structure: {e!r}", path=path) from None
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate bus ids", path=path)
    for f, t, *_ in raw:
        if f not in ids or t not in ids:
            raise ParseError(f"line {f}-{t} references unknown bus", path=path)
    return CaseFile(name=d.get("name") or (Path(path).stem if path else "case"), bus_ids=ids,
                    lines=_merge_lines(raw, unsupported), base_mva=float(d.get("base_mva", 100.0)),
                    vm=vm, va_deg=va, unsupported=unsupported)


BUILTIN_CASES = ("case14", "case118")


def parse_case(path) -> CaseFile:
    """Parse a ``.m`` or ``.json`` case file, or a built-in name such as ``"case118"``."""
    if str(path) in BUILTIN_CASES:
        text = resources.files("darse.data").joinpath(f"{path}.m").read_text()
        return parse_matpower(text, path=f"{path}.m", name=str(path))
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        return parse_json_case(text, p)
    return parse_matpower(text, p)


def case_to_json(case: CaseFile) -> str:
    d = {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [{"id": b, "vm": float(case.vm[k]) if case.vm is not None else 1.0,
                   "va_deg": float(case.va_deg[k]) if case.va_deg is not None else 0.0}
                  for k, b in enumerate(case.bus_ids)],
        "lines": [{"from": f, "to": t, "g": y.real, "b": y.imag, "shunt_g": ys.real, "shunt_b": ys.imag}
                  for f, t, y, ys in case.lines],
    }
    return json.dumps(d, indent=2)
