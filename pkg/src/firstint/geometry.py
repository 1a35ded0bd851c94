"""Symmetric tensor fields, symmetric connections and generalized Killing tensors.

Indices are 0-based in code and 1-based in anything printed. A covariant
derivative keeps its derivative slot separate from the symmetric block so
that both full symmetrization and pairwise antisymmetrization can be formed
from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement, permutations
from math import comb

from .expr import ZERO, Const, Domain, Expr, add, as_expr, diff, mul, power, to_text

__all__ = [
    "MAX_DIM", "MAX_RANK", "GeometryError", "multi_indices", "SymTensorField",
    "CovariantDerivative", "SymmetricConnection", "DynamicalSystem",
    "cov_derivative", "symmetrized_derivative", "curvature", "kt_residual",
    "reducible_kt_residual", "levi_civita", "metricity_residual",
    "inverse_metric", "contract_force", "gradient",
]

MAX_DIM = 6
MAX_RANK = 6
TIME = "t"


class GeometryError(ValueError):
    pass


def multi_indices(dim: int, rank: int):
    """Nondecreasing index tuples in lexicographic order."""
    return list(combinations_with_replacement(range(dim), rank))


def _check_bounds(dim, rank):
    if dim < 1 or dim > MAX_DIM:
        raise GeometryError(f"dimension {dim} outside 1..{MAX_DIM}")
    if rank < 0 or rank > MAX_RANK + 1:
        raise GeometryError(f"rank {rank} outside 0..{MAX_RANK}")


class SymTensorField:
    """Totally symmetric rank-``rank`` tensor field with Expr components.

    Any permutation of an index reads the same stored component.
    """

    __slots__ = ("dim", "rank", "comps")

    def __init__(self, dim: int, rank: int, comps=None):
        _check_bounds(dim, rank)
        self.dim = dim
        self.rank = rank
        table = {idx: ZERO for idx in multi_indices(dim, rank)}
        if comps:
            for idx, v in comps.items():
                key = tuple(sorted(idx))
                if key not in table:
                    raise GeometryError(f"index {idx} out of range for dimension {dim}")
                table[key] = as_expr(v)
        self.comps = table

    @classmethod
    def zeros(cls, dim, rank):
        return cls(dim, rank)

    @classmethod
    def scalar(cls, dim, value):
        return cls(dim, 0, {(): value})

    @classmethod
    def from_function(cls, dim, rank, fn):
        return cls(dim, rank, {idx: fn(idx) for idx in multi_indices(dim, rank)})

    def __getitem__(self, idx) -> Expr:
        if isinstance(idx, int):
            idx = (idx,)
        return self.comps[tuple(sorted(idx))]

    def items(self):
        return self.comps.items()

    def values(self):
        return self.comps.values()

    @property
    def size(self):
        return comb(self.dim + self.rank - 1, self.rank)

    def map(self, fn) -> "SymTensorField":
        return SymTensorField(self.dim, self.rank, {k: fn(v) for k, v in self.comps.items()})

    def scaled(self, factor) -> "SymTensorField":
        factor = as_expr(factor)
        return self.map(lambda v: mul(factor, v))

    def _same_shape(self, other):
        if (self.dim, self.rank) != (other.dim, other.rank):
            raise GeometryError("tensor shapes differ")

    def __add__(self, other):
        self._same_shape(other)
        return SymTensorField(self.dim, self.rank,
                              {k: add(v, other.comps[k]) for k, v in self.comps.items()})

    def __sub__(self, other):
        self._same_shape(other)
        return SymTensorField(self.dim, self.rank,
                              {k: add(v, mul(Const(-1), other.comps[k])) for k, v in self.comps.items()})

    def __neg__(self):
        return self.scaled(-1)

    def is_literal_zero(self):
        return all(v.is_zero_literal for v in self.comps.values())

    def __repr__(self):
        body = ", ".join(f"{[i + 1 for i in k]}: {to_text(v)}" for k, v in self.comps.items()
                         if not v.is_zero_literal)
        return f"SymTensorField(dim={self.dim}, rank={self.rank}, {{{body}}})"


@dataclass(frozen=True)
class CovariantDerivative:
    """``T_{I|j}`` stored as ``comps[(I, j)]`` with ``I`` nondecreasing."""

    dim: int
    rank: int
    comps: dict

    def __getitem__(self, key):
        idx, j = key
        return self.comps[(tuple(sorted(idx)), j)]


class SymmetricConnection:
    """Coefficients ``Gamma^a_bc`` stored with ``b <= c``."""

    def __init__(self, dim: int, coeffs=None):
        _check_bounds(dim, 0)
        self.dim = dim
        self.coeffs = {}
        for a in range(dim):
            for b, c in multi_indices(dim, 2):
                self.coeffs[(a, b, c)] = ZERO
        for (a, b, c), v in (coeffs or {}).items():
            if b > c:
                raise GeometryError(f"connection entry with b > c: {(a + 1, b + 1, c + 1)}")
            if (a, b, c) not in self.coeffs:
                raise GeometryError(f"connection index {(a + 1, b + 1, c + 1)} out of range")
            self.coeffs[(a, b, c)] = as_expr(v)

    def __call__(self, a, b, c) -> Expr:
        return self.coeffs[(a, b, c) if b <= c else (a, c, b)]

    def is_flat_zero(self):
        return all(v.is_zero_literal for v in self.coeffs.values())


@dataclass
class DynamicalSystem:
    """``q''^a = -Gamma^a_bc q'^b q'^c - Q^a`` together with its sampling data."""

    coords: tuple
    connection: SymmetricConnection
    forces: tuple
    metric: SymTensorField | None = None
    potential: Expr | None = None
    domain: Domain = field(default_factory=Domain)
    params: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.coords = tuple(self.coords)
        self.forces = tuple(as_expr(f) for f in self.forces)
        if len(set(self.coords)) != len(self.coords):
            raise GeometryError("duplicate coordinate names")
        if TIME in self.coords:
            raise GeometryError(f"{TIME!r} is reserved for time")
        if self.connection.dim != self.dim:
            raise GeometryError("connection dimension does not match coordinates")
        if len(self.forces) != self.dim:
            raise GeometryError("force vector must have one entry per coordinate")
        if self.metric is not None and (self.metric.rank, self.metric.dim) != (2, self.dim):
            raise GeometryError("metric must be a rank-2 field of the system dimension")

    @property
    def dim(self):
        return len(self.coords)

    @property
    def free_params(self):
        return tuple(self.params)

    def with_values(self, **values) -> "DynamicalSystem":
        """Copy with some free parameters replaced by rational constants."""
        from .expr import subs
        mapping = {k: Fraction(v) for k, v in values.items()}
        conn = SymmetricConnection(self.dim, {k: subs(v, mapping) for k, v in self.connection.coeffs.items()})
        metric = self.metric.map(lambda v: subs(v, mapping)) if self.metric is not None else None
        pot = subs(self.potential, mapping) if self.potential is not None else None
        dom = Domain({k: v for k, v in self.domain.boxes.items() if k not in mapping},
                     [subs(c, mapping) for c in self.domain.constraints],
                     frozenset(self.domain.param_names) - mapping.keys())
        return DynamicalSystem(self.coords, conn, [subs(f, mapping) for f in self.forces], metric, pot,
                               dom, {k: v for k, v in self.params.items() if k not in mapping}, self.name)


def _check_dim(T, sys):
    if T.dim != sys.dim:
        raise GeometryError(f"tensor dimension {T.dim} does not match system dimension {sys.dim}")


def gradient(e: Expr, coords) -> list:
    return [diff(e, x) for x in coords]


def cov_derivative(T: SymTensorField, sys: DynamicalSystem) -> CovariantDerivative:
    _check_dim(T, sys)
    conn = sys.connection
    out = {}
    for idx in multi_indices(T.dim, T.rank):
        for j, x in enumerate(sys.coords):
            terms = [diff(T[idx], x)]
            for k, ik in enumerate(idx):
                for s in range(T.dim):
                    g = conn(s, j, ik)
                    if g.is_zero_literal:
                        continue
                    moved = idx[:k] + (s,) + idx[k + 1:]
                    terms.append(mul(Const(-1), g, T[moved]))
            out[(idx, j)] = add(*terms)
    return CovariantDerivative(T.dim, T.rank, out)


def symmetrized_derivative(T: SymTensorField, sys: DynamicalSystem) -> SymTensorField:
    """``T_{(i1..ir|i_{r+1})}``: average over the placements of the derivative slot."""
    D = cov_derivative(T, sys)
    r = T.rank
    w = Const(Fraction(1, r + 1))
    comps = {}
    for J in multi_indices(T.dim, r + 1):
        parts = [D[(J[:p] + J[p + 1:], J[p])] for p in range(r + 1)]
        comps[J] = mul(w, add(*parts))
    return SymTensorField(T.dim, r + 1, comps)


def symmetrized_derivative_bruteforce(T, sys):
    """Average of ``T_{I|j}`` over all (r+1)! orderings; slow reference."""
    D = cov_derivative(T, sys)
    r = T.rank
    comps = {}
    for J in multi_indices(T.dim, r + 1):
        perms = list(permutations(J))
        parts = [D[(p[:r], p[r])] for p in perms]
        comps[J] = mul(Const(Fraction(1, len(perms))), add(*parts))
    return SymTensorField(T.dim, r + 1, comps)


def kt_residual(T: SymTensorField, sys: DynamicalSystem) -> SymTensorField:
    if T.rank < 1:
        raise GeometryError("Killing tensors have rank at least 1")
    return symmetrized_derivative(T, sys)


def reducible_kt_residual(B: SymTensorField, sys: DynamicalSystem) -> SymTensorField:
    if B.rank != 1:
        raise GeometryError("reducible Killing tensors are generated by a vector")
    return kt_residual(symmetrized_derivative(B, sys), sys)


def curvature(sys_or_conn, coords=None) -> dict:
    """All ``R^a_bcd`` as a dict keyed by 0-based ``(a, b, c, d)``."""
    if isinstance(sys_or_conn, DynamicalSystem):
        conn, coords = sys_or_conn.connection, sys_or_conn.coords
    else:
        conn = sys_or_conn
    n = conn.dim
    out = {}
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(n):
                    terms = [diff(conn(a, b, d), coords[c]), mul(Const(-1), diff(conn(a, b, c), coords[d]))]
                    for s in range(n):
                        terms.append(mul(conn(a, s, c), conn(s, b, d)))
                        terms.append(mul(Const(-1), conn(a, s, d), conn(s, b, c)))
                    out[(a, b, c, d)] = add(*terms)
    return out


def contract_force(T: SymTensorField, forces) -> SymTensorField:
    """``(T.Q)_I = T_{I c} Q^c``, lowering the rank by one."""
    if T.rank < 1:
        raise GeometryError("cannot contract a scalar")
    return SymTensorField.from_function(
        T.dim, T.rank - 1,
        lambda idx: add(*(mul(T[idx + (c,)], forces[c]) for c in range(T.dim))))


# ----------------------------------------------------------------- metrics

def _det(m):
    n = len(m)
    if n == 1:
        return m[0][0]
    terms = []
    for j in range(n):
        if m[0][j].is_zero_literal:
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        sign = Const(-1 if j % 2 else 1)
        terms.append(mul(sign, m[0][j], _det(minor)))
    return add(*terms)


def inverse_metric(g: SymTensorField) -> list:
    """Cofactor inverse, returned as a nested list of Exprs."""
    n = g.dim
    m = [[g[(i, j)] for j in range(n)] for i in range(n)]
    det = _det(m)
    if det.is_zero_literal:
        raise GeometryError("metric is degenerate")
    inv_det = power(det, -1)
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != j]
            cof = _det(minor) if n > 1 else Const(1)
            v = mul(Const(-1 if (i + j) % 2 else 1), cof, inv_det)
            out[i][j] = out[j][i] = v
    return out


def levi_civita(g: SymTensorField, coords) -> SymmetricConnection:
    n = g.dim
    ginv = inverse_metric(g)
    dg = {(a, b, c): diff(g[(a, b)], coords[c]) for a in range(n) for b in range(n) for c in range(n)}
    coeffs = {}
    for a in range(n):
        for b, c in multi_indices(n, 2):
            terms = []
            for d in range(n):
                if ginv[a][d].is_zero_literal:
                    continue
                inner = add(dg[(d, c, b)], dg[(d, b, c)], mul(Const(-1), dg[(b, c, d)]))
                terms.append(mul(ginv[a][d], inner))
            coeffs[(a, b, c)] = mul(Const(Fraction(1, 2)), add(*terms))
    return SymmetricConnection(n, coeffs)


def metricity_residual(sys: DynamicalSystem) -> CovariantDerivative:
    """``gamma_{ab|c}``; zero exactly when the connection is Levi-Civita for the metric."""
    if sys.metric is None:
        raise GeometryError("system has no kinetic metric")
    return cov_derivative(sys.metric, sys)


def raise_gradient(V: Expr, g: SymTensorField, coords) -> list:
    """``g^{ab} V_{,b}``."""
    ginv = inverse_metric(g)
    grad = gradient(V, coords)
    return [add(*(mul(ginv[a][b], grad[b]) for b in range(g.dim))) for a in range(g.dim)]
