"""Line-oriented system and first-integral definition files.

A system file has bracketed sections with ``key = value`` lines; ``#``
starts a comment. Every diagnostic carries the file name and line number.

    [system]
    coordinates = u, w
    [connection]
    Gamma^1_12 = 4*beta/u^2
    [forces]
    Q^1 = 1/u^2
    [parameters]
    beta = free
    [domain]
    u = [1, 2]
    u > 0

A first-integral file lists symmetric coefficient components keyed by
1-based velocity indices: ``M = ...`` is the velocity-free part and
``M[1,2] = ...`` the component multiplying ``u' w'`` (counted once per
index ordering, so the term is ``2*M[1,2]*u'*w'``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from ..ansatz import AnsatzSpec
from ..conditions import FICandidate
from ..expr import Domain, ExprSyntaxError, add, free_symbols, mul, parse, subs, sym, const
from ..geometry import (
    MAX_DIM, MAX_RANK, TIME, DynamicalSystem, GeometryError, SymmetricConnection, SymTensorField,
    levi_civita, raise_gradient,
)

__all__ = ["DefinitionError", "SystemDefinition", "load_system", "parse_system", "load_fi", "parse_fi",
           "permute_system"]

SECTIONS = ("system", "connection", "metric", "forces", "parameters", "domain", "ansatz", "verify")


class DefinitionError(ValueError):
    """Validation failure with a source location."""

    def __init__(self, message, source="<input>", line=None):
        self.source = source
        self.line = line
        loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + message)


@dataclass
class VerifySettings:
    span: tuple = (Fraction(0), Fraction(5))
    count: int = 3
    tol: float = 1e-7
    velocity_boxes: dict = field(default_factory=dict)
    ics: list = field(default_factory=list)
    integrals: list = field(default_factory=list)


@dataclass
class SolveSettings:
    kind: str = "fi"            # "fi" or "kt"
    family: str = "integral1"   # integral1 | integral2 | split | kt | reducible
    order: int = 2
    n: int = 0
    lam: Fraction = Fraction(1)
    ell: int = 1
    part: int = 1
    spec: AnsatzSpec = field(default_factory=AnsatzSpec)
    declared: bool = False


@dataclass
class SystemDefinition:
    system: DynamicalSystem
    text: str
    source: str
    fixed_params: dict
    verify: VerifySettings
    solve: SolveSettings
    name: str = ""


_HEADER = re.compile(r"^\[([A-Za-z]+)\]$")
_GAMMA = re.compile(r"^Gamma\^(\d+)_(\d)(\d)$")
_GAMMA_LONG = re.compile(r"^Gamma\^(\d+)_\{?(\d+),(\d+)\}?$")
_METRIC = re.compile(r"^g_(\d)(\d)$")
_METRIC_LONG = re.compile(r"^g_\{?(\d+),(\d+)\}?$")
_FORCE = re.compile(r"^Q\^(\d+)$")
_BOX = re.compile(r"^\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _lines(text):
    """Yield (line number, section, key, value) tuples; raw text for bare lines."""
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            section = m.group(1).lower()
            yield no, section, None, None
            continue
        if "=" in line and not re.search(r"[<>]", line.split("=", 1)[0]):
            key, value = line.split("=", 1)
            yield no, section, key.strip(), value.strip()
        else:
            yield no, section, line, None


def _rational(text, src, no):
    try:
        return Fraction(text.replace(" ", ""))
    except (ValueError, ZeroDivisionError):
        pass
    try:
        e = parse(text)
    except ExprSyntaxError as exc:
        raise DefinitionError(f"not a rational number: {text!r} ({exc})", src, no) from None
    from ..expr import Const
    if isinstance(e, Const):
        return e.value
    raise DefinitionError(f"not a rational number: {text!r}", src, no)


def _expr(text, src, no):
    try:
        return parse(text)
    except ExprSyntaxError as exc:
        raise DefinitionError(f"bad expression: {exc}", src, no) from None


def _index(text, dim, src, no):
    k = int(text)
    if not 1 <= k <= dim:
        raise DefinitionError(f"index {k} out of range 1..{dim}", src, no)
    return k - 1


def parse_system(text: str, source: str = "<input>") -> SystemDefinition:
    """Parse and validate a system file into a DynamicalSystem."""
    coords = None
    dim = None
    name = ""
    conn = {}
    metric = {}
    forces = {}
    potential = None
    params = {}
    boxes = {}
    constraints = []
    verify = VerifySettings()
    solve = SolveSettings()
    spec_kw = {}
    seen_sections = set()
    seen_keys = {}
    sec_line = {}

    def once(section, key, no):
        k = (section, key)
        if k in seen_keys:
            raise DefinitionError(f"duplicate entry {key!r} (first on line {seen_keys[k]})", source, no)
        seen_keys[k] = no

    for no, section, key, value in _lines(text):
        if key is None and value is None:
            if section not in SECTIONS:
                raise DefinitionError(f"unknown section [{section}]", source, no)
            if section in seen_sections:
                raise DefinitionError(f"section [{section}] repeated", source, no)
            seen_sections.add(section)
            sec_line[section] = no
            continue
        if section is None:
            raise DefinitionError("entry outside of any section", source, no)
        if section != "domain" and value is None:
            raise DefinitionError(f"expected 'key = value', got {key!r}", source, no)
        if section in ("connection", "metric", "forces") and coords is None:
            raise DefinitionError("[system] with coordinates must come first", source, no)
        if section == "system":
            once(section, key, no)
            if key == "coordinates":
                coords = tuple(c.strip() for c in value.split(","))
                for c in coords:
                    if not _IDENT.match(c):
                        raise DefinitionError(f"bad coordinate name {c!r}", source, no)
                if len(set(coords)) != len(coords):
                    raise DefinitionError("duplicate coordinate names", source, no)
                if TIME in coords:
                    raise DefinitionError(f"{TIME!r} is reserved for time", source, no)
                if not 1 <= len(coords) <= MAX_DIM:
                    raise DefinitionError(f"dimension must be 1..{MAX_DIM}", source, no)
                if dim is not None and dim != len(coords):
                    raise DefinitionError(f"dim = {dim} but {len(coords)} coordinates", source, no)
            elif key == "dim":
                dim = int(value)
                if coords is not None and dim != len(coords):
                    raise DefinitionError(f"dim = {dim} but {len(coords)} coordinates", source, no)
            elif key == "name":
                name = value
            else:
                raise DefinitionError(f"unknown key {key!r} in [system]", source, no)
        elif section == "connection":
            m = _GAMMA.match(key) or _GAMMA_LONG.match(key)
            if not m:
                raise DefinitionError(f"expected Gamma^a_bc, got {key!r}", source, no)
            a, b, c = (_index(g, len(coords), source, no) for g in m.groups())
            if b > c:
                raise DefinitionError(f"{key}: lower indices must be ordered (b <= c); the symmetric"
                                      " partner is implied", source, no)
            once(section, (a, b, c), no)
            conn[(a, b, c)] = _expr(value, source, no)
        elif section == "metric":
            m = _METRIC.match(key) or _METRIC_LONG.match(key)
            if not m:
                raise DefinitionError(f"expected g_ab, got {key!r}", source, no)
            a, b = (_index(g, len(coords), source, no) for g in m.groups())
            if a > b:
                raise DefinitionError(f"{key}: indices must be ordered (a <= b)", source, no)
            once(section, (a, b), no)
            metric[(a, b)] = _expr(value, source, no)
        elif section == "forces":
            once(section, key, no)
            if key == "V":
                potential = _expr(value, source, no)
                continue
            m = _FORCE.match(key)
            if not m:
                raise DefinitionError(f"expected Q^a or V, got {key!r}", source, no)
            forces[_index(m.group(1), len(coords), source, no)] = _expr(value, source, no)
        elif section == "parameters":
            once(section, key, no)
            if not _IDENT.match(key):
                raise DefinitionError(f"bad parameter name {key!r}", source, no)
            params[key] = None if value == "free" else _rational(value, source, no)
        elif section == "domain":
            if value is None:
                m = re.match(r"^(.*?)\s*([<>])\s*(.*)$", key)
                if not m or not m.group(1) or not m.group(3):
                    raise DefinitionError(f"expected 'name = [lo, hi]' or a strict inequality, got {key!r}",
                                          source, no)
                lhs, op, rhs = m.groups()
                lhs_e, rhs_e = _expr(lhs, source, no), _expr(rhs, source, no)
                diff_e = add(lhs_e, mul(const(-1), rhs_e)) if op == ">" else add(rhs_e, mul(const(-1), lhs_e))
                constraints.append((no, diff_e))
                continue
            once(section, key, no)
            m = _BOX.match(value)
            if not m:
                raise DefinitionError(f"expected [lo, hi] for {key!r}", source, no)
            lo, hi = _rational(m.group(1), source, no), _rational(m.group(2), source, no)
            if not lo < hi:
                raise DefinitionError(f"empty range for {key!r}", source, no)
            boxes[key] = (lo, hi)
        elif section == "ansatz":
            once(section, key, no)
            solve.declared = True
            _ansatz_entry(key, value, solve, spec_kw, source, no)
        elif section == "verify":
            _verify_entry(key, value, verify, coords, source, no, once)

    if coords is None:
        raise DefinitionError("missing [system] coordinates", source)
    n = len(coords)
    if ("connection" in seen_sections) == ("metric" in seen_sections):
        second = max(sec_line.get("connection", 0), sec_line.get("metric", 0)) or None
        raise DefinitionError("exactly one of [connection] or [metric] is required", source, second)
    if "forces" not in seen_sections:
        raise DefinitionError("missing [forces] section", source)
    try:
        if metric:
            g = SymTensorField(n, 2, metric)
            connection = levi_civita(g, coords)
        else:
            g = None
            connection = SymmetricConnection(n, conn)
    except (GeometryError, ZeroDivisionError) as exc:
        raise DefinitionError(str(exc), source, sec_line.get("metric") or sec_line.get("connection")) from None
    if potential is not None:
        if forces:
            raise DefinitionError("give either V or Q^a components, not both", source, sec_line["forces"])
        if g is None:
            raise DefinitionError("V needs a [metric] to define forces", source, sec_line["forces"])
        force_list = raise_gradient(potential, g, coords)
    else:
        force_list = [forces.get(a, const(0)) for a in range(n)]

    fixed = {k: v for k, v in params.items() if v is not None}
    free = {k: None for k, v in params.items() if v is None}
    known = set(coords) | set(params) | {TIME}
    every = [e for e in list(conn.values()) + list(metric.values()) + force_list]
    if potential is not None:
        every.append(potential)
    for e in every:
        stray = free_symbols(e) - known
        if stray:
            raise DefinitionError(f"undeclared symbols {sorted(stray)}; declare them in [parameters]", source)
    for c in coords:
        if c not in boxes:
            raise DefinitionError(f"no range for coordinate {c!r} in [domain]", source, sec_line.get("domain"))
    for p in free:
        if p not in boxes:
            raise DefinitionError(f"free parameter {p!r} needs a range in [domain]", source,
                                  sec_line.get("domain"))
    for k in boxes:
        if k not in known:
            raise DefinitionError(f"range for unknown symbol {k!r}", source, sec_line.get("domain"))
    for no, c in constraints:
        stray = free_symbols(c) - known
        if stray:
            raise DefinitionError(f"constraint uses undeclared symbols {sorted(stray)}", source, no)
    cons = [subs(c, fixed) for _, c in constraints]
    dom = Domain({k: v for k, v in boxes.items() if k not in fixed}, cons, frozenset(free))
    sys = DynamicalSystem(coords, connection, force_list, g, potential, dom, {**free, **fixed}, name)
    if fixed:
        sys = sys.with_values(**fixed)
    solve.spec = AnsatzSpec(**spec_kw) if spec_kw else AnsatzSpec()
    return SystemDefinition(sys, text, source, fixed, verify, solve, name or Path(source).stem)


def _ansatz_entry(key, value, solve, spec_kw, src, no):
    if key == "degree":
        spec_kw["degree"] = int(value)
    elif key.startswith("degree[") and key.endswith("]"):
        spec_kw.setdefault("slot_degree", {})[key[7:-1]] = int(value)
    elif key == "multipliers":
        spec_kw["multipliers"] = [_expr(v.strip(), src, no) for v in _split_top(value)]
    elif key == "kind":
        if value not in ("fi", "kt", "reducible"):
            raise DefinitionError("kind must be fi, kt or reducible", src, no)
        solve.kind = value
    elif key == "family":
        if value not in ("integral1", "integral2", "split"):
            raise DefinitionError("family must be integral1, integral2 or split", src, no)
        solve.family = value
    elif key in ("order", "rank"):
        solve.order = int(value)
    elif key == "n":
        solve.n = int(value)
    elif key == "lambda":
        solve.lam = _rational(value, src, no)
    elif key == "ell":
        solve.ell = int(value)
    elif key == "part":
        solve.part = int(value)
    else:
        raise DefinitionError(f"unknown key {key!r} in [ansatz]", src, no)


def _split_top(text):
    """Split on commas outside parentheses."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return [s for s in (x.strip() for x in out) if s]


def _verify_entry(key, value, verify, coords, src, no, once):
    if key == "span":
        m = _BOX.match(value)
        if not m:
            raise DefinitionError("span must be [t0, t1]", src, no)
        verify.span = (_rational(m.group(1), src, no), _rational(m.group(2), src, no))
        if not verify.span[0] < verify.span[1]:
            raise DefinitionError("span must be increasing", src, no)
    elif key == "count":
        verify.count = int(value)
        if verify.count < 3:
            raise DefinitionError("at least 3 initial conditions are required", src, no)
    elif key == "tol":
        verify.tol = float(value)
    elif key.startswith("velocity "):
        c = key.split(None, 1)[1].strip()
        if coords is None or c not in coords:
            raise DefinitionError(f"unknown coordinate {c!r}", src, no)
        m = _BOX.match(value)
        if not m:
            raise DefinitionError("velocity range must be [lo, hi]", src, no)
        verify.velocity_boxes[c] = (_rational(m.group(1), src, no), _rational(m.group(2), src, no))
    elif key == "ic":
        vals = [_rational(v, src, no) for v in value.split(",")]
        if coords is None or len(vals) != 2 * len(coords):
            raise DefinitionError("ic needs positions then velocities for every coordinate", src, no)
        n = len(coords)
        verify.ics.append(([float(v) for v in vals[:n]], [float(v) for v in vals[n:]]))
    elif key == "integrals":
        verify.integrals.extend(v.strip() for v in value.split(",") if v.strip())
    else:
        raise DefinitionError(f"unknown key {key!r} in [verify]", src, no)
    if key != "ic" and key != "integrals":
        once("verify", key, no)


def load_system(path) -> SystemDefinition:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DefinitionError(f"cannot read: {exc.strerror}", str(path)) from None
    return parse_system(text, str(path))


# ------------------------------------------------------------ FI files

_COEFF = re.compile(r"^M(?:\[\s*([\d,\s]*)\])?$")


def parse_fi(text: str, coords, source: str = "<input>", fixed: dict | None = None) -> FICandidate:
    """Parse an FI file for a system with coordinates ``coords``."""
    coords = tuple(coords)
    n = len(coords)
    order = None
    label = {}
    comps = {}
    lines = {}
    for no, section, key, value in _lines(text):
        if section is not None:
            raise DefinitionError("FI files have no sections", source, no)
        if value is None:
            raise DefinitionError(f"expected 'key = value', got {key!r}", source, no)
        if key == "order":
            order = int(value)
            if not 0 <= order <= MAX_RANK:
                raise DefinitionError(f"order must be 0..{MAX_RANK}", source, no)
            continue
        if key in ("name", "label"):
            label["name"] = value
            continue
        m = _COEFF.match(key)
        if not m:
            raise DefinitionError(f"expected M or M[i,j,...], got {key!r}", source, no)
        idx = ()
        if m.group(1) is not None and m.group(1).strip():
            idx = tuple(sorted(_index(k.strip(), n, source, no) for k in m.group(1).split(",")))
        if idx in lines:
            raise DefinitionError(f"component {key} repeats line {lines[idx]} (indices are symmetric)",
                                  source, no)
        lines[idx] = no
        comps[idx] = (_expr(value, source, no), no)
    if order is None:
        order = max((len(i) for i in comps), default=0)
    coeffs = [dict() for _ in range(order + 1)]
    for idx, (e, no) in comps.items():
        if len(idx) > order:
            raise DefinitionError(f"component of rank {len(idx)} exceeds order {order}", source, no)
        coeffs[len(idx)][idx] = subs(e, fixed or {})
    fields = [SymTensorField(n, r, c) for r, c in enumerate(coeffs)]
    return FICandidate(fields, coords, label)


def load_fi(path, coords, fixed=None) -> FICandidate:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DefinitionError(f"cannot read: {exc.strerror}", str(path)) from None
    fi = parse_fi(text, coords, str(path), fixed)
    fi.label.setdefault("name", path.stem)
    return fi


# ------------------------------------------------- coordinate relabeling

def permute_system(sys: DynamicalSystem, perm) -> DynamicalSystem:
    """Relabel coordinates: new coordinate ``i`` plays the role of old ``perm[i]``."""
    coords = sys.coords
    mapping = {coords[p]: sym(coords[i]) for i, p in enumerate(perm)}
    inv = {p: i for i, p in enumerate(perm)}
    n = sys.dim
    conn = {}
    for a in range(n):
        for b in range(n):
            for c in range(b, n):
                pa, pb, pc = perm[a], perm[b], perm[c]
                v = sys.connection(pa, min(pb, pc), max(pb, pc))
                if not v.is_zero_literal:
                    conn[(a, b, c)] = subs(v, mapping)
    forces = [subs(sys.forces[perm[a]], mapping) for a in range(n)]
    metric = None
    if sys.metric is not None:
        metric = SymTensorField(n, 2, {(a, b): subs(sys.metric[(perm[a], perm[b])], mapping)
                                       for a in range(n) for b in range(a, n)})
    pot = subs(sys.potential, mapping) if sys.potential is not None else None
    boxes = {}
    for k, v in sys.domain.boxes.items():
        if k in coords:
            boxes[coords[inv[coords.index(k)]]] = v
        else:
            boxes[k] = v
    dom = Domain(boxes, [subs(c, mapping) for c in sys.domain.constraints], sys.domain.param_names)
    return DynamicalSystem(coords, SymmetricConnection(n, conn), forces, metric, pot, dom,
                           dict(sys.params), sys.name)
