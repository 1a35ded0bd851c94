"""First-integral condition systems.

An m-th order candidate ``I = sum_r M_{i1..ir}(t,q) q'^i1 ... q'^ir`` is conserved
along ``q'' = -Gamma q' q' - Q`` iff a ladder of tensor equations holds. This
module assembles those equations in three flavours:

* the raw system in the unknown coefficients ``M_r(t, q)``;
* the reduced families with polynomial time dependence (``assemble_integral1``)
  or exponential time dependence (``assemble_integral2``), whose unknowns are
  time-independent tensors ``C0``, ``L{N}_{r}``, ``G`` and the constant ``s``;
* the parity split of the polynomial family into two independent parts.

Every condition set is produced by a *builder* that maps unknown fields to
residuals and an FI template. Calling the builder with placeholder fields
gives the symbolic system; calling it with concrete fields evaluates it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

from .expr import (
    ZERO, Const, Expr, Unknown, add, as_expr, diff, exp, mul, power, subs, sym,
)
from .geometry import (
    MAX_RANK, TIME, DynamicalSystem, SymTensorField,
    contract_force, multi_indices, symmetrized_derivative,
)

__all__ = [
    "FICandidate", "Residual", "Slot", "ConditionSet", "NoetherGenerator",
    "velocity_name", "multinomial", "total_derivative_residual",
    "assemble_pde_system", "assemble_integral1", "assemble_integral2",
    "assemble_parity_split", "assemble_kt", "assemble_reducible_kt",
    "integral1_template", "integral2_template", "fields_from_fi", "noether_from_fi",
    "ConditionError", "functional_rank", "corrupt", "permute_fi",
]


class ConditionError(ValueError):
    pass


def velocity_name(coord: str) -> str:
    return f"{coord}'"


def multinomial(idx) -> int:
    """Number of distinct orderings of the multi-index ``idx``."""
    out = factorial(len(idx))
    for i in set(idx):
        out //= factorial(idx.count(i))
    return out


def _exponents(idx, dim):
    e = [0] * dim
    for i in idx:
        e[i] += 1
    return tuple(e)


def _index_of(expo):
    return tuple(i for i, k in enumerate(expo) for _ in range(k))


# ----------------------------------------------------------------- candidates

@dataclass
class FICandidate:
    """Velocity polynomial with coefficient tensors ``coeffs[r]`` of rank ``r``."""

    coeffs: list
    coords: tuple
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = tuple(self.coords)
        for r, c in enumerate(self.coeffs):
            if c.rank != r or c.dim != len(self.coords):
                raise ConditionError(f"coefficient {r} has rank {c.rank}, dimension {c.dim}")

    @property
    def order(self):
        return len(self.coeffs) - 1

    @property
    def dim(self):
        return len(self.coords)

    @classmethod
    def zero(cls, order, coords, label=None):
        n = len(coords)
        return cls([SymTensorField(n, r) for r in range(order + 1)], coords, dict(label or {}))

    def velocity_poly(self) -> dict:
        """Monomial exponent tuple -> coefficient Expr."""
        out = {}
        for M in self.coeffs:
            for idx, v in M.items():
                if not v.is_zero_literal:
                    out[_exponents(idx, self.dim)] = mul(Const(multinomial(idx)), v)
        return out

    def expression(self) -> Expr:
        vel = [sym(velocity_name(c)) for c in self.coords]
        terms = []
        for expo, c in self.velocity_poly().items():
            terms.append(mul(c, *(power(vel[i], k) for i, k in enumerate(expo) if k)))
        return add(*terms)

    def map(self, fn) -> "FICandidate":
        return FICandidate([M.map(fn) for M in self.coeffs], self.coords, dict(self.label))

    def padded(self, order) -> "FICandidate":
        if order < self.order:
            raise ConditionError("cannot pad to a lower order")
        extra = [SymTensorField(self.dim, r) for r in range(self.order + 1, order + 1)]
        return FICandidate(list(self.coeffs) + extra, self.coords, dict(self.label))

    def __add__(self, other):
        m = max(self.order, other.order)
        a, b = self.padded(m), other.padded(m)
        return FICandidate([x + y for x, y in zip(a.coeffs, b.coeffs)], self.coords, {})

    def __sub__(self, other):
        m = max(self.order, other.order)
        a, b = self.padded(m), other.padded(m)
        return FICandidate([x - y for x, y in zip(a.coeffs, b.coeffs)], self.coords, {})


def total_derivative_residual(fi: FICandidate, sys: DynamicalSystem) -> list:
    """Coefficient tensors of ``dI/dt`` along the dynamics, ranks ``0..m+1``.

    Works on the expanded velocity polynomial, independently of the tensor
    ladder formulas, so it can certify their output.
    """
    if fi.dim != sys.dim:
        raise ConditionError("candidate and system dimensions differ")
    n = sys.dim
    conn = sys.connection
    acc: dict = {}

    def put(expo, term):
        if not term.is_zero_literal:
            acc.setdefault(expo, []).append(term)

    for expo, c in fi.velocity_poly().items():
        put(expo, diff(c, TIME))
        for a, x in enumerate(sys.coords):
            up = list(expo)
            up[a] += 1
            put(tuple(up), diff(c, x))
        for a in range(n):
            if expo[a] == 0:
                continue
            down = list(expo)
            down[a] -= 1
            k = mul(Const(-expo[a]), c)
            put(tuple(down), mul(k, sys.forces[a]))
            for b, cc in multi_indices(n, 2):
                g = conn(a, b, cc)
                if g.is_zero_literal:
                    continue
                e2 = list(down)
                e2[b] += 1
                e2[cc] += 1
                put(tuple(e2), mul(Const(1 if b == cc else 2), k, g))
    out = []
    for r in range(fi.order + 2):
        comps = {}
        for idx in multi_indices(n, r):
            terms = acc.get(_exponents(idx, n))
            if terms:
                comps[idx] = mul(Const(Fraction(1, multinomial(idx))), add(*terms))
        out.append(SymTensorField(n, r, comps))
    return out


# ------------------------------------------------------------ condition sets

@dataclass(frozen=True)
class Slot:
    """An unknown tensor: name, rank and the symbols it depends on.

    ``gauge`` marks the scalar whose constant part is a trivial integral;
    ``constant`` marks a number rather than a field.
    """

    name: str
    rank: int
    deps: tuple
    gauge: bool = False
    constant: bool = False

    def placeholder(self, dim) -> SymTensorField:
        return SymTensorField.from_function(dim, self.rank, lambda idx: Unknown(self.name, idx, self.deps))


@dataclass
class Residual:
    """A named residual tensor; ``antisymmetric`` entries are keyed by ``i < j``."""

    name: str
    rank: int
    comps: dict
    antisymmetric: bool = False

    @classmethod
    def of(cls, name, T: SymTensorField):
        return cls(name, T.rank, dict(T.comps))

    def values(self):
        return list(self.comps.values())

    def is_literal_zero(self):
        return all(v.is_zero_literal for v in self.comps.values())

    def scaled(self, factor):
        factor = as_expr(factor)
        return Residual(self.name, self.rank, {k: mul(factor, v) for k, v in self.comps.items()},
                        self.antisymmetric)


class _Fields:
    def __init__(self, values, slots, dim):
        self.values = values
        self.slots = slots
        self.dim = dim

    def get(self, name, rank):
        v = self.values.get(name)
        if v is None:
            return SymTensorField(self.dim, rank)
        if v.rank != rank:
            raise ConditionError(f"slot {name} expects rank {rank}, got {v.rank}")
        return v

    def has(self, name):
        return name in self.slots


class ConditionSet:
    """Residuals linear in a registry of unknown slots.

    ``kind`` is ``"fi"`` (certified through the candidate template),
    ``"kt"`` (a Killing tensor of rank ``info['rank']``) or ``"pde"``.
    """

    def __init__(self, kind, slots, builder, sys: DynamicalSystem, info=None):
        self.kind = kind
        self.slots = {s.name: s for s in slots}
        self.builder = builder
        self.sys = sys
        self.info = dict(info or {})
        self.placeholders = {s.name: s.placeholder(sys.dim) for s in slots}
        entries, template = builder(_Fields(self.placeholders, self.slots, sys.dim))
        self.entries = [e for e in entries if not e.is_literal_zero()]
        self.template = template
        for e in self.entries:
            for v in e.values():
                self._check_registered(v)

    def _check_registered(self, e, seen=None):
        stack = [e]
        seen = set()
        while stack:
            x = stack.pop()
            if id(x) in seen:
                continue
            seen.add(id(x))
            if isinstance(x, Unknown):
                if x.slot not in self.slots:
                    raise ConditionError(f"residual references unregistered unknown {x.slot}")
            for child in getattr(x, "terms", ()) or getattr(x, "factors", ()):
                stack.append(child)
            for attr in ("base", "arg"):
                child = getattr(x, attr, None)
                if isinstance(child, Expr):
                    stack.append(child)

    @property
    def entry_names(self):
        return [e.name for e in self.entries]

    def instantiate(self, fields: dict):
        """Residuals (aligned with ``entries``) and template for concrete fields."""
        unknown = set(fields) - set(self.slots)
        if unknown:
            raise ConditionError(f"unregistered slots {sorted(unknown)}")
        entries, template = self.builder(_Fields(fields, self.slots, self.sys.dim))
        by_name = {e.name: e for e in entries}
        out = []
        for e in self.entries:
            got = by_name.get(e.name)
            if got is None:
                got = Residual(e.name, e.rank, {k: ZERO for k in e.comps}, e.antisymmetric)
            out.append(got)
        return out, template

    def all_residuals(self, fields: dict):
        """Every residual the builder emits, including ones that vanish structurally."""
        entries, template = self.builder(_Fields(fields, self.slots, self.sys.dim))
        return entries, template

    def summary(self):
        return {
            "kind": self.kind,
            **{k: (str(v) if isinstance(v, Expr) else v) for k, v in self.info.items()},
            "unknowns": [{"name": s.name, "rank": s.rank} for s in self.slots.values()],
            "entries": [{"name": e.name, "rank": e.rank, "components": len(e.comps)} for e in self.entries],
        }


# ------------------------------------------------------------ raw PDE system

def _check_order(m):
    if m < 1:
        raise ConditionError("order must be at least 1")
    if m > MAX_RANK:
        raise ConditionError(f"order {m} exceeds the configured rank bound {MAX_RANK}")


def _flow(sys, lower, upper, rate, r):
    """``rate + sym(lower|) - (r+1) upper.Q`` as a rank-r tensor (lower/upper may be None)."""
    n = sys.dim
    out = rate
    if lower is not None and r >= 1 and not lower.is_literal_zero():
        out = out + symmetrized_derivative(lower, sys)
    if upper is not None and not upper.is_literal_zero():
        out = out - contract_force(upper, sys.forces).scaled(r + 1)
    return out if out is not None else SymTensorField(n, r)


def assemble_pde_system(m: int, sys: DynamicalSystem) -> ConditionSet:
    """The full system for unknown coefficients ``M{r}(t, q)``, r = 0..m.

    Entries: ``killing-top``, ``time-top``, ``ladder[r]`` (r = 1..m-1),
    ``scalar-time``, ``integrability-t`` and the antisymmetric
    ``integrability-q``. The first four are exactly the velocity-monomial
    coefficients of dI/dt; the last two are the integrability conditions of
    the scalar coefficient.
    """
    _check_order(m)
    deps = (TIME,) + sys.coords
    slots = [Slot(f"M{r}", r, deps) for r in range(m + 1)]
    n = sys.dim

    def build(F):
        M = [F.get(f"M{r}", r) for r in range(m + 1)]
        dt = [x.map(lambda v: diff(v, TIME)) for x in M]
        entries = [Residual.of("killing-top", symmetrized_derivative(M[m], sys))]
        entries.append(Residual.of("time-top", _flow(sys, M[m - 1], None, dt[m], m)))
        for r in range(m - 1, 0, -1):
            entries.append(Residual.of(f"ladder[{r}]", _flow(sys, M[r - 1], M[r + 1], dt[r], r)))
        entries.append(Residual.of("scalar-time", dt[0] - contract_force(M[1], sys.forces)))
        M1Q = contract_force(M[1], sys.forces)[()]
        X = contract_force(M[2], sys.forces) if m >= 2 else SymTensorField(n, 1)
        comps = {}
        for (i,) in multi_indices(n, 1):
            comps[(i,)] = add(diff(M[1][i], TIME, 2),
                              mul(Const(-2), diff(X[i], TIME)),
                              diff(M1Q, sys.coords[i]))
        entries.append(Residual("integrability-t", 1, comps))
        anti = {}
        for i in range(n):
            for j in range(i + 1, n):
                xi, xj = sys.coords[i], sys.coords[j]
                anti[(i, j)] = add(diff(X[i], xj), mul(Const(-1), diff(X[j], xi)),
                                   mul(Const(Fraction(-1, 2)), diff(dt[1][i], xj)),
                                   mul(Const(Fraction(1, 2)), diff(dt[1][j], xi)))
        entries.append(Residual("integrability-q", 2, anti, antisymmetric=True))
        return entries, FICandidate(M, sys.coords, {"family": "general", "order": m})

    return ConditionSet("pde", slots, build, sys, {"family": "general", "order": m})


def pde_residuals(fi: FICandidate, sys: DynamicalSystem) -> dict:
    """Residuals of the raw system with ``fi``'s coefficients substituted."""
    cs = assemble_pde_system(fi.order, sys)
    entries, _ = cs.all_residuals({f"M{r}": c for r, c in enumerate(fi.coeffs)})
    return {e.name: e for e in entries}


# ------------------------------------------------------ polynomial in time

def _l(N, r):
    return f"L{N}_{r}"


def integral1_template(m, n, F, sys, *, top_zero=False, omit_top=False):
    """Time-Taylor coefficients ``A[(N, r)]`` of the polynomial family.

    ``M_r(t) = sum_N t^N A[(N, r)]``. For ``m >= 2`` the top coefficient is
    ``C0 - sum_N t^N/N sym(L{N-1}_{m-1}|)``, the middle ranks are ``L{N}_{r}``
    and the scalar is ``G + sum_N t^N/N L{N-1}_1.Q + s t^(n+1)/(n+1)``.
    For ``m = 1`` the scalar is ``sum_N t^N L{N}_0``.
    """
    dim = sys.dim
    A = {}
    top_rank = m - 1
    for N in range(n + 2):
        for r in range(m + 1):
            A[(N, r)] = SymTensorField(dim, r)
    if not top_zero:
        A[(0, m)] = F.get("C0", m)
        for N in range(1, n + 1):
            if omit_top and N == n:
                continue
            L = F.get(_l(N - 1, top_rank), top_rank)
            if not L.is_literal_zero():
                A[(N, m)] = symmetrized_derivative(L, sys).scaled(Fraction(-1, N))
    if m == 1:
        for N in range(n + 1):
            A[(N, 0)] = F.get(_l(N, 0), 0)
        return A
    for r in range(1, m):
        for N in range(n + 1):
            A[(N, r)] = F.get(_l(N, r), r)
    A[(0, 0)] = F.get("G", 0)
    for N in range(1, n + 1):
        L1 = F.get(_l(N - 1, 1), 1)
        if not L1.is_literal_zero():
            A[(N, 0)] = contract_force(L1, sys.forces).scaled(Fraction(1, N))
    s = F.get("s", 0)
    A[(n + 1, 0)] = s.scaled(Fraction(1, n + 1))
    return A


def _poly_fi(A, m, n, coords, label):
    t = sym(TIME)
    dim = len(coords)
    coeffs = []
    for r in range(m + 1):
        comps = {}
        for idx in multi_indices(dim, r):
            comps[idx] = add(*(mul(power(t, N), A[(N, r)][idx]) for N in range(n + 2)))
        coeffs.append(SymTensorField(dim, r, comps))
    return FICandidate(coeffs, coords, label)


def _integral1_builder(m, n, sys, label, top_zero=False, omit_top=False):
    def build(F):
        A = integral1_template(m, n, F, sys, top_zero=top_zero, omit_top=omit_top)
        entries = []
        for K in range(n + 1):
            top = A[(K, m)]
            if top.is_literal_zero():
                continue
            res = Residual.of("killing[C0]" if K == 0 else f"killing[dL{K - 1}]",
                              symmetrized_derivative(top, sys))
            entries.append(res if K == 0 else res.scaled(-K))
        for r in range(m, -1, -1):
            for K in range(n + 2):
                rate = A[(K + 1, r)].scaled(K + 1) if K + 1 <= n + 1 else SymTensorField(sys.dim, r)
                if r == 0:
                    val = rate - contract_force(A[(K, 1)], sys.forces)
                    entries.append(Residual.of(f"scalar[t^{K}]", val))
                    continue
                upper = A[(K, r + 1)] if r < m else None
                val = _flow(sys, A[(K, r - 1)], upper, rate, r)
                if r == m:
                    entries.append(Residual.of(f"killing[L{K}]", val))
                elif r == 1 and K == n + 1:
                    # only the constant s reaches this degree
                    entries.append(Residual.of("s-const", val).scaled(K))
                else:
                    res = Residual.of(f"ladder[r={r},t^{K}]", val)
                    entries.append(res.scaled(K) if r == 1 and K >= 1 else res)
        return entries, _poly_fi(A, m, n, sys.coords, dict(label))
    return build


def _integral1_slots(m, n, sys, zero=frozenset(), top_zero=False, with_C0=True, with_G=True, with_s=True):
    q = sys.coords
    slots = []
    if with_C0 and not top_zero:
        slots.append(Slot("C0", m, q))
    if m == 1:
        for N in range(n + 1):
            if _l(N, 0) not in zero:
                slots.append(Slot(_l(N, 0), 0, q, gauge=(N == 0)))
        return slots
    for r in range(m - 1, 0, -1):
        for N in range(n + 1):
            if _l(N, r) not in zero:
                slots.append(Slot(_l(N, r), r, q))
    if with_G:
        slots.append(Slot("G", 0, q, gauge=True))
    if with_s:
        slots.append(Slot("s", 0, q, constant=True))
    return slots


def assemble_integral1(m: int, n: int, sys: DynamicalSystem, *, zero=(), top_zero=False,
                       omit_top=False, with_C0=True, with_G=True, with_s=True) -> ConditionSet:
    """Polynomial-in-time family of degree ``n`` in t for order ``m``.

    Entries, all time independent:

    ``killing[C0]``            C0 is an m-th order Killing tensor;
    ``killing[dL{N}]``         sym(L{N}_{m-1}|) is an m-th order Killing tensor;
    ``killing[L{N}]``          L{N}_{m-1} is an (m-1)-th order Killing tensor
                               (only the top degree survives unless ``top_zero``);
    ``ladder[r=R,t^K]``        the t^K coefficient linking ranks R-1, R, R+1;
    ``scalar[t^K]``            the scalar t^K coefficient; at K = n it fixes s;
    ``s-const``                s has zero gradient.

    ``zero`` names slots forced to vanish, ``top_zero`` forces the whole
    top-rank coefficient to vanish, and ``omit_top`` drops its t^n term.
    Entries that vanish identically are not emitted.
    """
    _check_order(m)
    if n < 0:
        raise ConditionError("time degree must be non-negative")
    zero = frozenset(zero)
    slots = _integral1_slots(m, n, sys, zero, top_zero, with_C0, with_G, with_s)
    label = {"family": "integral1", "order": m, "degree": n}
    if top_zero:
        label["top_zero"] = True
    builder = _integral1_builder(m, n, sys, label, top_zero, omit_top)
    return ConditionSet("fi", slots, builder, sys, label)


# ------------------------------------------------------ exponential in time

def integral2_template(m, lam, F, sys):
    """Coefficients ``A[r]`` with ``M_r(t) = exp(lam t) A[r]``."""
    dim = sys.dim
    inv = power(lam, -1)
    A = {}
    if m == 1:
        L = F.get("L_0", 0)
        A[1] = SymTensorField.from_function(dim, 1, lambda i: mul(Const(-1), inv, diff(L[()], sys.coords[i[0]])))
        A[0] = L
        return A
    Ltop = F.get(f"L_{m - 1}", m - 1)
    A[m] = symmetrized_derivative(Ltop, sys).scaled(mul(Const(-1), inv))
    for r in range(1, m):
        A[r] = F.get(f"L_{r}", r)
    A[0] = contract_force(A[1], sys.forces).scaled(inv)
    return A


def assemble_integral2(m: int, lam, sys: DynamicalSystem) -> ConditionSet:
    """Exponential family ``exp(lam t) * (...)`` for a fixed nonzero ``lam``.

    Entries: ``killing[dL]`` (sym(L_{m-1}|) is an m-th order Killing tensor),
    ``ladder[r=R]`` for R = 1..m-1 and ``scalar`` when they do not vanish
    identically.
    """
    _check_order(m)
    lam = as_expr(lam)
    if lam.is_zero_literal:
        raise ConditionError("the exponential rate must be nonzero")
    q = sys.coords
    if m == 1:
        slots = [Slot("L_0", 0, q)]
    else:
        slots = [Slot(f"L_{r}", r, q) for r in range(m - 1, 0, -1)]
    label = {"family": "integral2", "order": m, "rate": lam}

    def build(F):
        A = integral2_template(m, lam, F, sys)
        entries = [Residual.of("killing[dL]", symmetrized_derivative(A[m], sys)).scaled(mul(Const(-1), lam))]
        for r in range(m, -1, -1):
            rate = A[r].scaled(lam)
            if r == 0:
                entries.append(Residual.of("scalar", rate - contract_force(A[1], sys.forces)))
                continue
            val = _flow(sys, A[r - 1], A[r + 1] if r < m else None, rate, r)
            name = "time-top" if r == m else f"ladder[r={r}]"
            res = Residual.of(name, val)
            entries.append(res.scaled(lam) if r == 1 else res)
        e = exp(mul(lam, sym(TIME)))
        coeffs = [A[r].map(lambda v: mul(e, v)) for r in range(m + 1)]
        return entries, FICandidate(coeffs, sys.coords, dict(label))

    return ConditionSet("fi", slots, build, sys, label)


# ---------------------------------------------------------- parity split

def _parity_zero(m, n, keep_same):
    """Names of ``L{N}_{r}`` whose (N, r) parity is excluded."""
    out = set()
    for r in range(0 if m == 1 else 1, max(m, 1)):
        for N in range(n + 1):
            same = (N % 2) == (r % 2)
            if same != keep_same:
                out.add(_l(N, r))
    return out


def assemble_parity_split(m: int, ell: int, sys: DynamicalSystem, *, reduce_odd=False):
    """The two independent parts of the polynomial family.

    Part 1 (``part=1``) has even powers of t on even velocity products and odd
    powers on odd products; it is the degree-2*ell family with mismatched
    parities and s removed. Part 2 (``part=2``) has the opposite pairing; it is
    the degree-(2*ell+1) family with matching parities, C0, G and s removed.

    Odd orders are handled, when ``reduce_odd`` is set, by assembling order
    m+1 with the whole top coefficient forced to zero.
    """
    if ell < 0:
        raise ConditionError("ell must be non-negative")
    top_zero = False
    order = m
    if m % 2:
        if not reduce_odd:
            raise ConditionError("odd order needs the reduction flag")
        order, top_zero = m + 1, True
    n1, n2 = 2 * ell, 2 * ell + 1
    cs1 = assemble_integral1(order, n1, sys, zero=_parity_zero(order, n1, True),
                             top_zero=top_zero, with_s=False)
    cs2 = assemble_integral1(order, n2, sys, zero=_parity_zero(order, n2, False),
                             top_zero=top_zero, with_C0=False, with_G=False, with_s=False)
    for cs, part in ((cs1, 1), (cs2, 2)):
        cs.info.update({"family": "split", "part": part, "ell": ell, "order": m})
        cs.template.label.update(cs.info)
    return cs1, cs2


def reconstruction_residuals(m: int, k: int, fields: dict, sys: DynamicalSystem, odd_degree=False):
    """Template difference ``I - (J1 + J2)`` for even order ``m``.

    ``fields`` holds the unknowns of the degree-2k (or 2k+1 with
    ``odd_degree``) polynomial family; the constant ``s`` is replaced by the
    force contraction of the top-degree vector, which is what the split
    templates produce. Returns the coefficient tensors of the difference.
    """
    if m % 2:
        raise ConditionError("reconstruction identities are stated for even orders")
    n = 2 * k + 1 if odd_degree else 2 * k
    f = dict(fields)
    f["s"] = contract_force(f.get(_l(n, 1), SymTensorField(sys.dim, 1)), sys.forces)

    def pick(keep_same, degree):
        out = {}
        for name, v in f.items():
            if name.startswith("L"):
                N, r = map(int, name[1:].split("_"))
                if N <= degree and ((N % 2) == (r % 2)) == keep_same:
                    out[name] = v
        return out

    full = _poly_fi(integral1_template(m, n, _Fields(f, set(f), sys.dim), sys), m, n, sys.coords, {})
    if not odd_degree:
        f1 = {**pick(True, 2 * k), "C0": f["C0"], "G": f["G"]}
        f2 = pick(False, 2 * k + 1)
        j1 = _poly_fi(integral1_template(m, 2 * k, _Fields(f1, set(f1), sys.dim), sys), m, 2 * k, sys.coords, {})
        j2 = _poly_fi(integral1_template(m, 2 * k + 1, _Fields(f2, set(f2), sys.dim), sys, omit_top=True),
                      m, 2 * k + 1, sys.coords, {})
    else:
        f1 = {**pick(True, 2 * k + 2), "C0": f["C0"], "G": f["G"]}
        f2 = pick(False, 2 * k + 1)
        j1 = _poly_fi(integral1_template(m, 2 * k + 2, _Fields(f1, set(f1), sys.dim), sys, omit_top=True),
                      m, 2 * k + 2, sys.coords, {})
        j2 = _poly_fi(integral1_template(m, 2 * k + 1, _Fields(f2, set(f2), sys.dim), sys),
                      m, 2 * k + 1, sys.coords, {})
    return (full - (j1 + j2)).coeffs


# ----------------------------------------------- Killing tensor searches

def assemble_kt(rank: int, sys: DynamicalSystem) -> ConditionSet:
    """``killing``: the rank-``rank`` unknown ``C`` has vanishing symmetrized derivative."""
    _check_order(rank)
    slot = Slot("C", rank, sys.coords)

    def build(F):
        C = F.get("C", rank)
        fi = FICandidate.zero(rank, sys.coords, {"family": "killing", "rank": rank})
        fi.coeffs[rank] = C
        return [Residual.of("killing", symmetrized_derivative(C, sys))], fi

    return ConditionSet("kt", [slot], build, sys, {"family": "killing", "rank": rank})


def assemble_reducible_kt(sys: DynamicalSystem) -> ConditionSet:
    """``killing``: the symmetrized derivative of the unknown vector ``B`` is a Killing tensor."""
    slot = Slot("B", 1, sys.coords)

    def build(F):
        B = F.get("B", 1)
        T = symmetrized_derivative(B, sys)
        fi = FICandidate.zero(2, sys.coords, {"family": "reducible-killing", "rank": 2})
        fi.coeffs[2] = T
        return [Residual.of("killing", symmetrized_derivative(T, sys))], fi

    return ConditionSet("kt", [slot], build, sys, {"family": "reducible-killing", "rank": 2})


# --------------------------------------------------- from candidates back

def _taylor_t(e: Expr, N: int) -> Expr:
    return mul(Const(Fraction(1, factorial(N))), subs(diff(e, TIME, N), {TIME: 0}))


def fields_from_fi(fi: FICandidate, cs: ConditionSet) -> dict:
    """Read the unknowns of a polynomial-family condition set off a candidate.

    The candidate's coefficients must be polynomials in t; the fields are
    taken from the Taylor coefficients. Check the result by comparing
    ``cs.instantiate(fields)[1]`` with the candidate.
    """
    if cs.info.get("family") not in ("integral1", "split"):
        raise ConditionError("only polynomial families can be read off a candidate")
    m = cs.template.order
    n = cs.info.get("degree")
    if n is None:
        n = max(int(name[1:].split("_")[0]) for name in cs.slots if name.startswith("L"))
    fi = fi.padded(m)
    out = {}
    for name, slot in cs.slots.items():
        if name == "C0":
            out[name] = fi.coeffs[m].map(lambda v: _taylor_t(v, 0))
        elif name == "G":
            out[name] = fi.coeffs[0].map(lambda v: _taylor_t(v, 0))
        elif name == "s":
            out[name] = fi.coeffs[0].map(lambda v: mul(Const(n + 1), _taylor_t(v, n + 1)))
        else:
            N, r = map(int, name[1:].split("_"))
            out[name] = fi.coeffs[r].map(lambda v, N=N: _taylor_t(v, N))
    return out


# ------------------------------------------------------ Noether mapping

@dataclass
class NoetherGenerator:
    """Gauged weak Noether generator attached to a first integral.

    ``xi`` and ``phi`` vanish (no non-conservative forces), ``eta[i]`` is the
    negative velocity gradient of I and ``f`` the Noether function.
    """

    xi: Expr
    eta: list
    phi: list
    f: Expr


def noether_from_fi(fi: FICandidate, sys: DynamicalSystem) -> NoetherGenerator:
    if sys.metric is None:
        raise ConditionError("the Noether mapping needs a kinetic metric")
    n = sys.dim
    eta_terms = [[] for _ in range(n)]
    f_terms = []
    vel = [sym(velocity_name(c)) for c in fi.coords]
    for expo, c in fi.velocity_poly().items():
        r = sum(expo)
        mono = [power(vel[i], k) for i, k in enumerate(expo) if k]
        if r != 1:
            f_terms.append(mul(Const(1 - r), c, *mono))
        for a in range(n):
            if expo[a] == 0:
                continue
            down = list(expo)
            down[a] -= 1
            mono_a = [power(vel[i], k) for i, k in enumerate(down) if k]
            eta_terms[a].append(mul(Const(-expo[a]), c, *mono_a))
    return NoetherGenerator(ZERO, [add(*t) for t in eta_terms], [ZERO] * n, add(*f_terms))


# ------------------------------------------------------------ utilities

def functional_rank(candidates, sys: DynamicalSystem, params: dict, samples: int = 5,
                    seed: int = 0, t=Fraction(1, 3), rtol: float = 1e-9) -> int:
    """Generic rank of the Jacobian of ``candidates`` in (q, q').

    Functions are independent where their differentials are; the rank is
    taken as the maximum over a few random phase-space points.
    """
    import numpy as np
    from .expr import evaluate, sample_points
    coords = list(sys.coords)
    vel = [velocity_name(c) for c in coords]
    rows = []
    for fi in candidates:
        e = fi.expression()
        rows.append([diff(e, x) for x in coords + vel])
    rng = np.random.default_rng([seed, 41])
    pts = sample_points(sys.domain, samples, rng, names=coords, fixed=params)
    for v in vel:
        pts[v] = [Fraction(int(k), 16) for k in rng.integers(-12, 13, size=samples)]
    pts[TIME] = [Fraction(t)] * samples
    flat = [x for r in rows for x in r]
    vals = evaluate(flat, pts, "double")
    best = 0
    width = len(coords) + len(vel)
    for p in range(samples):
        J = np.array([[float(vals[i * width + j][p]) for j in range(width)] for i in range(len(rows))])
        s = np.linalg.svd(J, compute_uv=False)
        best = max(best, int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0)
    return best


def corrupt(fi: FICandidate) -> FICandidate:
    """Flip the sign of one term: the first nonzero component of the lowest-rank coefficient.

    Used as a negative control; a conserved quantity with two or more
    independent terms is not conserved after the flip.
    """
    for r, M in enumerate(fi.coeffs):
        for idx, v in M.items():
            if not v.is_zero_literal:
                comps = dict(M.items())
                comps[idx] = mul(Const(-1), v)
                coeffs = list(fi.coeffs)
                coeffs[r] = SymTensorField(M.dim, M.rank, comps)
                return FICandidate(coeffs, fi.coords, {**fi.label, "corrupted": True})
    raise ConditionError("cannot corrupt the zero candidate")


def permute_fi(fi: FICandidate, perm) -> FICandidate:
    """Relabel coordinates: new coordinate ``i`` is old coordinate ``perm[i]``.

    Components are re-indexed and coordinate symbols (and velocities) are
    swapped simultaneously, so the result describes the same function in the
    permuted chart.
    """
    coords = fi.coords
    mapping = {}
    for i, p in enumerate(perm):
        mapping[coords[p]] = sym(coords[i])
        mapping[velocity_name(coords[p])] = sym(velocity_name(coords[i]))
    out = []
    for M in fi.coeffs:
        comps = {}
        for idx in multi_indices(M.dim, M.rank):
            old = tuple(sorted(perm[i] for i in idx))
            comps[idx] = subs(M[old], mapping)
        out.append(SymTensorField(M.dim, M.rank, comps))
    return FICandidate(out, coords, dict(fi.label))
