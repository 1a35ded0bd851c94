"""Finite-basis search for solutions of linear condition sets.

Each unknown component is expanded as ``sum_b c_b phi_b(q)`` over a per-slot
basis. The residuals are linear in the unknown components and their partial
derivatives, so sampling them at random points gives a matrix ``A`` with
``A c = 0`` for every solution. Its kernel is computed exactly when all
sampled entries are rational and by SVD otherwise. Each kernel vector is then
certified through the candidate's total time derivative at fresh points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement

import numpy as np

from .conditions import ConditionSet, FICandidate, total_derivative_residual
from .expr import (
    ONE, ZERO, Add, Const, Domain, EvaluationError, Exp, Expr, Mul, NotExactError, Pow,
    Unknown, add, as_expr, diff, evaluate, mul, sample_points, sym, to_text, zero_test,
)
from .geometry import TIME, DynamicalSystem, SymTensorField

__all__ = [
    "AnsatzSpec", "AnsatzSpace", "LinearSystem", "NullspaceResult", "SolutionFamily",
    "Member", "IllConditionedError", "NonlinearityError", "assemble_linear_system",
    "nullspace", "nullspace_exact", "nullspace_float", "solve", "monomials",
    "SCOPE", "certify_candidate", "probe_linearity", "draw_parameters",
]

SCOPE = "within ansatz space"
SVD_RTOL = 1e-10
MARGIN = 10.0


class IllConditionedError(ArithmeticError):
    pass


class NonlinearityError(ValueError):
    pass


# ------------------------------------------------------------------ bases

def monomials(coords, degree):
    """All monomials of total degree <= ``degree``, by degree then lexicographically."""
    out = [ONE]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(len(coords)), d):
            out.append(mul(*(sym(coords[i]) for i in combo)))
    return out


@dataclass
class AnsatzSpec:
    """User-level basis description.

    ``multipliers`` apply to every slot unless ``rank_multipliers`` has an
    entry for the slot's rank; ``slot_degree`` overrides ``degree`` by name.
    """

    degree: int = 2
    multipliers: list = field(default_factory=lambda: [ONE])
    slot_degree: dict = field(default_factory=dict)
    rank_multipliers: dict = field(default_factory=dict)

    def describe(self):
        return {
            "degree": self.degree,
            "multipliers": [to_text(m) for m in self.multipliers],
            "slot_degree": dict(sorted(self.slot_degree.items())),
            "rank_multipliers": {str(k): [to_text(m) for m in v] for k, v in sorted(self.rank_multipliers.items())},
        }


def _independent(columns, preseed=None, rtol=1e-10):
    """Greedy selection of numerically independent columns (Gram-Schmidt twice)."""
    basis = []
    if preseed is not None:
        v = preseed / np.linalg.norm(preseed)
        basis.append(v)
    keep = []
    for k, col in enumerate(columns):
        norm = np.linalg.norm(col)
        if norm == 0 or not np.isfinite(norm):
            continue
        v = col / norm
        for _ in range(2):
            for b in basis:
                v = v - (b @ v) * b
        if np.linalg.norm(v) > rtol:
            basis.append(v / np.linalg.norm(v))
            keep.append(k)
    return keep


class AnsatzSpace:
    """Per-slot bases for the unknowns of a condition set.

    The constant function is excluded from gauge slots (a constant scalar is
    a trivial integral) and constant slots get the basis ``[1]``. Basis
    functions that are linearly dependent on the sampling domain are pruned.
    """

    def __init__(self, cs: ConditionSet, spec: AnsatzSpec, params: dict, seed: int = 0):
        sys = cs.sys
        self.spec = spec
        self.params = dict(params)
        self.bases = {}
        rng = np.random.default_rng([seed, 7])
        for name, slot in cs.slots.items():
            if slot.constant:
                self.bases[name] = [ONE]
                continue
            deg = spec.slot_degree.get(name, spec.degree)
            mults = spec.rank_multipliers.get(slot.rank, spec.multipliers)
            cands = []
            for mlt in mults:
                for mono in monomials(sys.coords, deg):
                    f = mul(as_expr(mlt), mono)
                    if f not in cands:
                        cands.append(f)
            self.bases[name] = self._prune(cands, sys, slot.gauge, rng)
        self.columns = []
        for name, slot in cs.slots.items():
            from .geometry import multi_indices
            for idx in multi_indices(sys.dim, slot.rank):
                for b in range(len(self.bases[name])):
                    self.columns.append((name, idx, b))
        self.slot_ranks = {name: slot.rank for name, slot in cs.slots.items()}
        self.dim = sys.dim

    def _prune(self, cands, sys, gauge, rng):
        n = 2 * len(cands) + 8
        pts = sample_points(sys.domain, n, rng, names=list(sys.coords), fixed=self.params)
        vals = evaluate(cands, pts, "double")
        pre = np.ones(n) if gauge else None
        keep = _independent([np.asarray(v, dtype=float) for v in vals], preseed=pre)
        return [cands[k] for k in keep]

    @property
    def size(self):
        return len(self.columns)

    def column_labels(self):
        out = []
        for name, idx, b in self.columns:
            i = ",".join(str(k + 1) for k in idx)
            out.append(f"{name}[{i}]*{to_text(self.bases[name][b])}")
        return out

    def fields(self, vector) -> dict:
        """Concrete slot fields for a coefficient vector (exact Fractions)."""
        acc = {}
        for (name, idx, b), c in zip(self.columns, vector):
            if c == 0:
                continue
            acc.setdefault(name, {}).setdefault(idx, []).append(mul(Const(c), self.bases[name][b]))
        out = {}
        for name, rank in self.slot_ranks.items():
            comps = {idx: add(*terms) for idx, terms in acc.get(name, {}).items()}
            out[name] = SymTensorField(self.dim, rank, comps)
        return out

    def describe(self):
        return {
            "spec": self.spec.describe(),
            "bases": {k: [to_text(f) for f in v] for k, v in self.bases.items()},
            "coefficients": self.size,
        }


# ---------------------------------------------------- linear extraction

def _linear_form(e: Expr, memo: dict):
    """Split ``e`` as ``sum_u coeff_u * u + rest`` over Unknown nodes ``u``.

    Raises NonlinearityError when an unknown appears nonlinearly.
    """
    hit = memo.get(e)
    if hit is not None:
        return hit
    if isinstance(e, Unknown):
        out = ({e: ONE}, ZERO)
    elif isinstance(e, Add):
        coeffs, rest = {}, []
        for t in e.terms:
            c, r = _linear_form(t, memo)
            for u, v in c.items():
                coeffs.setdefault(u, []).append(v)
            if not r.is_zero_literal:
                rest.append(r)
        out = ({u: add(*v) for u, v in coeffs.items()}, add(*rest))
    elif isinstance(e, Mul):
        parts = [(f, _linear_form(f, memo)) for f in e.factors]
        lin = [p for p in parts if p[1][0]]
        if not lin:
            out = ({}, e)
        elif len(lin) > 1:
            raise NonlinearityError("product of unknowns")
        else:
            f0, (c, r) = lin[0]
            others = [f for f, _ in parts if f is not f0]
            coeffs = {u: mul(v, *others) for u, v in c.items()}
            out = (coeffs, mul(r, *others) if not r.is_zero_literal else ZERO)
    elif isinstance(e, (Pow, Exp)):
        inner = e.base if isinstance(e, Pow) else e.arg
        c, _ = _linear_form(inner, memo)
        if c:
            raise NonlinearityError("unknown inside a power or exponential")
        out = ({}, e)
    else:
        out = ({}, e)
    memo[e] = out
    return out


@dataclass
class LinearSystem:
    matrix: object  # numpy float array or list of Fraction rows
    exact: bool
    points: dict
    rows: int
    cols: int
    magnitude: object = None
    transform: object = None    # column preconditioner: solutions are transform @ y


class _Forms:
    """Linear forms of every residual component, cached per condition set."""

    def __init__(self, cs: ConditionSet):
        memo = {}
        self.forms = []
        for entry in cs.entries:
            for key, v in entry.comps.items():
                coeffs, rest = _linear_form(v, memo)
                self.forms.append((entry.name, key, coeffs, rest))
        self.unknowns = sorted({u for _, _, c, _ in self.forms for u in c}, key=lambda u: u.key)

    @property
    def components(self):
        return len(self.forms)


def _forms(cs):
    f = getattr(cs, "_linear_forms", None)
    if f is None:
        f = cs._linear_forms = _Forms(cs)
    return f


def probe_linearity(cs: ConditionSet, space: AnsatzSpace, seed: int = 0, points: int = 2,
                    rtol: float = 1e-8) -> float:
    """Superposition check R(c1 + c2) = R(c1) + R(c2) by direct substitution.

    Uses sparse random integer coefficient vectors so the substituted fields
    stay small. Returns the worst relative defect; raises NonlinearityError
    above ``rtol``.
    """
    rng = np.random.default_rng([seed, 23])
    D = space.size
    vecs = []
    for _ in range(2):
        v = [Fraction(0)] * D
        for j in rng.choice(D, size=min(D, 6), replace=False):
            v[int(j)] = Fraction(int(rng.integers(1, 5)) * (1 if rng.random() < 0.5 else -1))
        vecs.append(v)
    vecs.append([a + b for a, b in zip(*vecs)])
    pts = sample_points(cs.sys.domain, points, rng, names=list(cs.sys.coords), fixed=space.params)
    values = []
    for v in vecs:
        ents, _ = cs.instantiate(space.fields(v))
        exprs = [e for ent in ents for e in ent.values()]
        values.append(np.array([np.asarray(x, dtype=float) for x in evaluate(exprs, pts, "double")]))
    lhs, rhs = values[2], values[0] + values[1]
    scale = max(float(np.max(np.abs(values[0]), initial=0)), float(np.max(np.abs(values[1]), initial=0)), 1e-300)
    defect = float(np.max(np.abs(lhs - rhs), initial=0)) / scale
    if defect > rtol:
        raise NonlinearityError(f"superposition defect {defect:.3g}")
    return defect


def assemble_linear_system(cs: ConditionSet, space: AnsatzSpace, points: int | None = None,
                           seed: int = 0, precision: str = "auto") -> LinearSystem:
    """Sample the residuals into ``A`` (rows: component x point, cols: coefficients)."""
    sys = cs.sys
    forms = _forms(cs)
    D = space.size
    R = max(forms.components, 1)
    if points is None:
        points = max(math.ceil(2 * D / R) + 4, math.ceil(1.5 * D / R))
    rng = np.random.default_rng([seed, 11])
    pts = sample_points(sys.domain, points, rng, names=list(sys.coords), fixed=space.params)
    # every expression needed: linear coefficients, leftovers, basis derivatives
    need = []
    slot_of = {}
    for u in forms.unknowns:
        slot_of[u] = u.slot
    deriv_keys = sorted({(u.slot, u.derivs) for u in forms.unknowns})
    basis_exprs = {}
    for slot, derivs in deriv_keys:
        for b, phi in enumerate(space.bases[slot]):
            e = phi
            for x in derivs:
                e = diff(e, x)
            basis_exprs[(slot, derivs, b)] = e
    for _, _, coeffs, rest in forms.forms:
        need.extend(coeffs.values())
        need.append(rest)
    bkeys = list(basis_exprs)
    need.extend(basis_exprs[k] for k in bkeys)
    exact = precision in ("auto", "exact")
    vals = None
    if exact:
        try:
            vals = evaluate(need, pts, "exact")
        except (NotExactError, EvaluationError):
            if precision == "exact":
                raise
            exact = False
    if vals is None:
        vals = evaluate(need, pts, "extended" if precision == "extended" else "double")
        if precision == "extended":
            vals = [np.array([float(x) for x in np.ravel(v)]) for v in vals]
    k = 0
    coeff_vals = []
    for _, _, coeffs, rest in forms.forms:
        cv = {}
        for u in coeffs:
            cv[u] = vals[k]
            k += 1
        rv = vals[k]
        k += 1
        if not rest.is_zero_literal:
            mag = float(np.max(np.abs(np.asarray(rv, dtype=float))))
            if mag > 1e-9:
                raise NonlinearityError("residual has a part independent of the unknowns")
        coeff_vals.append(cv)
    bvals = {key: vals[k + i] for i, key in enumerate(bkeys)}
    col_of = {c: i for i, c in enumerate(space.columns)}
    nb = {s: len(b) for s, b in space.bases.items()}
    if exact:
        rows = []
        for cv in coeff_vals:
            block = [[Fraction(0)] * D for _ in range(points)]
            for u, cvals in cv.items():
                for b in range(nb[u.slot]):
                    j = col_of[(u.slot, u.index, b)]
                    bv = bvals[(u.slot, u.derivs, b)]
                    for p in range(points):
                        block[p][j] += cvals[p] * bv[p]
            rows.extend(block)
        return LinearSystem(rows, True, pts, len(rows), D)
    A = np.zeros((forms.components * points, D))
    mag = np.zeros_like(A)
    for r, cv in enumerate(coeff_vals):
        sl = slice(r * points, (r + 1) * points)
        for u, cvals in cv.items():
            cvals = np.asarray(cvals, dtype=float)
            for b in range(nb[u.slot]):
                j = col_of[(u.slot, u.index, b)]
                term = cvals * np.asarray(bvals[(u.slot, u.derivs, b)], dtype=float)
                A[sl, j] += term
                mag[sl, j] += np.abs(term)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(mag))):
        raise EvaluationError("non-finite matrix entry")
    return LinearSystem(A, False, pts, A.shape[0], D, mag, _whitening(space, pts))


def _whitening(space: AnsatzSpace, pts) -> np.ndarray:
    """Block-diagonal change of basis making each slot's basis orthonormal on ``pts``.

    Derivatives are linear, so the same matrix acts on every column built
    from a slot; it only improves the conditioning of the rank decision.
    """
    D = space.size
    T = np.zeros((D, D))
    cache = {}
    for name, basis in space.bases.items():
        vals = evaluate(basis, pts, "double")
        Phi = np.column_stack([np.asarray(v, dtype=float) for v in vals])
        norms = np.linalg.norm(Phi, axis=0)
        norms[norms == 0] = 1.0
        _, R = np.linalg.qr(Phi / norms)
        d = np.abs(np.diag(R))
        if d.size and d.min() < 1e-13 * d.max():
            cache[name] = np.diag(1.0 / norms)
        else:
            cache[name] = np.linalg.solve(R, np.eye(len(basis))) / norms[:, None]
    pos = {}
    for j, (name, idx, b) in enumerate(space.columns):
        if b == 0:
            pos[(name, idx)] = j
    for (name, idx), j in pos.items():
        blk = cache[name]
        k = blk.shape[0]
        T[j:j + k, j:j + k] = blk
    return T


# ------------------------------------------------------------ nullspace

@dataclass
class NullspaceResult:
    basis: list          # list of coefficient vectors (Fractions if exact else floats)
    rank: int
    exact: bool
    margin: float = math.inf
    singular_values: list = field(default_factory=list)


def _int_row(row):
    den = 1
    for x in row:
        if x:
            den = den * x.denominator // math.gcd(den, x.denominator)
    ints = [int(x * den) for x in row]
    g = 0
    for v in ints:
        g = math.gcd(g, v)
    return [v // g for v in ints] if g > 1 else ints


def _rref_int(rows, ncols):
    """Fraction-free Gauss-Jordan on integer rows; returns (rows, pivots)."""
    rows = [list(r) for r in rows if any(r)]
    pivots = []
    prow = 0
    for col in range(ncols):
        best = None
        for i in range(prow, len(rows)):
            v = rows[i][col]
            if v and (best is None or abs(v) < abs(rows[best][col])):
                best = i
        if best is None:
            continue
        rows[prow], rows[best] = rows[best], rows[prow]
        piv = rows[prow]
        p = piv[col]
        for i in range(len(rows)):
            if i == prow:
                continue
            e = rows[i][col]
            if e:
                r = [p * a - e * b for a, b in zip(rows[i], piv)]
                g = 0
                for v in r:
                    g = math.gcd(g, v)
                rows[i] = [v // g for v in r] if g > 1 else r
        pivots.append(col)
        prow += 1
        if prow == len(rows):
            break
    return rows[:prow], pivots


_PRIME = 2147483629


def _rank_rows_mod_p(int_rows, ncols):
    """Indices of a maximal set of rows independent modulo a large prime."""
    if not int_rows:
        return []
    M = np.array([[v % _PRIME for v in r] for r in int_rows], dtype=np.int64)
    idx = np.arange(M.shape[0])
    chosen = []
    r = 0
    for col in range(ncols):
        if r >= M.shape[0]:
            break
        nz = np.nonzero(M[r:, col])[0]
        if nz.size == 0:
            continue
        k = r + nz[0]
        M[[r, k]] = M[[k, r]]
        idx[[r, k]] = idx[[k, r]]
        inv = pow(int(M[r, col]), _PRIME - 2, _PRIME)
        M[r] = (M[r] * inv) % _PRIME
        below = M[r + 1:, col].copy()
        if below.any():
            # split the product to stay inside int64
            lo = M[r] & 0xFFFF
            hi = M[r] >> 16
            upd = (np.outer(below, hi) % _PRIME * 65536 + np.outer(below, lo)) % _PRIME
            M[r + 1:] = (M[r + 1:] - upd) % _PRIME
        chosen.append(int(idx[r]))
        r += 1
    return chosen


def _kernel_from_rref(rows, pivots, ncols):
    free = [c for c in range(ncols) if c not in set(pivots)]
    basis = []
    for f in free:
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for row, pc in zip(rows, pivots):
            if row[f]:
                v[pc] = Fraction(-row[f], row[pc])
        basis.append(v)
    return basis


def nullspace_exact(rows, ncols) -> NullspaceResult:
    """Exact kernel of a rational matrix given as Fraction rows."""
    int_rows = [_int_row(r) for r in rows]
    int_rows = [r for r in int_rows if any(r)]
    chosen = _rank_rows_mod_p(int_rows, ncols)
    while True:
        red, piv = _rref_int([int_rows[i] for i in chosen], ncols)
        basis = _kernel_from_rref(red, piv, ncols)
        if not basis:
            break
        # confirm every row is annihilated; an unlucky prime can hide rows
        scale = [_int_row(v) for v in basis]
        bad = [i for i, r in enumerate(int_rows)
               if i not in set(chosen) and any(sum(a * b for a, b in zip(r, v) if a) for v in scale)]
        if not bad:
            break
        chosen = chosen + bad[:max(1, len(bad))]
    return NullspaceResult(basis, len(piv), True)


def nullspace_float(A, magnitude=None) -> NullspaceResult:
    """Kernel by SVD after row and column equilibration.

    ``magnitude`` holds the sums of absolute values of the terms behind each
    entry; scaling by it (rather than by the entries) keeps columns that
    cancel to rounding noise from being blown up to unit size. The rank
    threshold is ``sigma_max * 1e-10``; singular values within a factor 10
    of it on either side make the decision ill-conditioned.
    """
    A = np.asarray(A, dtype=float)
    D = A.shape[1]
    if A.size == 0:
        return NullspaceResult([np.eye(D)[i] for i in range(D)], 0, False)
    M = np.abs(A) if magnitude is None else np.asarray(magnitude, dtype=float)
    # entries that cancelled to rounding level are zero
    A = np.where(np.abs(A) <= 1e-13 * M, 0.0, A)
    cn = np.linalg.norm(M, axis=0)
    cn[cn == 0] = 1.0
    B = A / cn
    rn = np.linalg.norm(M / cn, axis=1)
    keep = (rn > 0) & np.any(B != 0, axis=1)
    B = B[keep] / rn[keep, None]
    if B.shape[0] == 0:
        return NullspaceResult([np.eye(D)[i] / cn[i] for i in range(D)], 0, False)
    _, s, Vt = np.linalg.svd(B, full_matrices=True)
    thr = s[0] * SVD_RTOL
    rank = int(np.sum(s > thr))
    margin = math.inf
    if rank > 0:
        margin = min(margin, s[rank - 1] / thr)
    if rank < len(s):
        margin = min(margin, thr / s[rank] if s[rank] > 0 else math.inf)
    if margin < MARGIN:
        raise IllConditionedError(
            f"rank decision margin {margin:.3g} below {MARGIN:g}; use more points or extended precision")
    kernel = [Vt[i] / cn for i in range(rank, D)]
    return NullspaceResult(kernel, rank, False, margin, [float(x) for x in s])


def nullspace(A, ncols=None) -> NullspaceResult:
    if isinstance(A, LinearSystem):
        if A.exact:
            return nullspace_exact(A.matrix, A.cols)
        if A.transform is None:
            return nullspace_float(A.matrix, A.magnitude)
        T = A.transform
        res = nullspace_float(A.matrix @ T, A.magnitude @ np.abs(T))
        res.basis = [T @ y for y in res.basis]
        return res
    if isinstance(A, np.ndarray) and A.dtype != object:
        return nullspace_float(A)
    rows = [[Fraction(x) for x in r] for r in A]
    return nullspace_exact(rows, ncols if ncols is not None else (len(rows[0]) if rows else 0))


# ------------------------------------------------------ canonical forms

def _rref_fraction(vectors, ncols):
    int_rows = [_int_row(v) for v in vectors]
    red, piv = _rref_int(int_rows, ncols)
    return [[Fraction(x, r[p]) for x in r] for r, p in zip(red, piv)]


def _rref_float(K):
    """Row-reduce the kernel rows so each starts with 1 (partial pivoting)."""
    M = np.array(K, dtype=float)
    if M.size == 0:
        return M
    d, D = M.shape
    scale = np.max(np.abs(M))
    r = 0
    for col in range(D):
        if r >= d:
            break
        k = r + int(np.argmax(np.abs(M[r:, col])))
        if abs(M[k, col]) <= 1e-8 * scale:
            continue
        M[[r, k]] = M[[k, r]]
        M[r] /= M[r, col]
        for i in range(d):
            if i != r:
                M[i] -= M[i, col] * M[r]
        r += 1
    return M[:r]


def _rationalize(x, max_den=10 ** 6):
    if abs(x) < 1e-11:
        return Fraction(0)
    return Fraction(x).limit_denominator(max_den)


# ------------------------------------------------------- solve + certify

@dataclass
class Member:
    vector: list
    fields: dict
    candidate: FICandidate
    status: str          # "certified", "floating" or "spurious"
    witness: object = None


@dataclass
class SolutionFamily:
    """Certified kernel of a sampled condition set within its ansatz space."""

    members: list
    space: AnsatzSpace
    cs: ConditionSet
    exact: bool
    rank: int
    margin: float
    rows: int
    params: dict
    seed: int
    parameter_dimensions: list = field(default_factory=list)
    scope: str = SCOPE

    @property
    def certified(self):
        return [m for m in self.members if m.status != "spurious"]

    @property
    def dimension(self):
        return len(self.certified)

    @property
    def spurious(self):
        return [m for m in self.members if m.status == "spurious"]

    @property
    def parameter_conditional(self):
        return any(d != self.dimension for d in self.parameter_dimensions)

    @property
    def vectors(self):
        return [m.vector for m in self.certified]

    def contains(self, fi: FICandidate, samples: int = 40, seed: int = 5, rtol: float = 1e-8) -> bool:
        """Whether ``fi`` lies in the span of the certified members (as functions)."""
        cands = [m.candidate for m in self.certified]
        sys = self.cs.sys
        rng = np.random.default_rng([seed, 3])
        names = list(sys.coords) + ([TIME] if TIME in sys.domain.boxes else [])
        pts = sample_points(sys.domain, samples, rng, names=names, fixed=self.params)
        if TIME not in pts:
            pts[TIME] = [Fraction(k, 7) for k in range(samples)]
        vrng = np.random.default_rng([seed, 4])
        from .conditions import velocity_name
        for c in sys.coords:
            pts[velocity_name(c)] = [Fraction(int(k), 64) for k in vrng.integers(-128, 128, size=samples)]
        target = np.asarray(evaluate([fi.expression()], pts)[0], dtype=float)
        if not cands:
            return bool(np.max(np.abs(target)) < 1e-12)
        cols = evaluate([c.expression() for c in cands], pts)
        M = np.column_stack([np.asarray(c, dtype=float) for c in cols])
        coef, *_ = np.linalg.lstsq(M, target, rcond=None)
        resid = np.linalg.norm(M @ coef - target)
        return bool(resid <= rtol * max(np.linalg.norm(target), 1e-300) * 10)

    def report(self):
        labels = self.space.column_labels()
        out = {
            "scope": self.scope,
            "dimension": self.dimension,
            "arithmetic": "exact" if self.exact else "floating",
            "matrix": {"rows": self.rows, "columns": self.space.size, "rank": self.rank,
                       "margin": None if math.isinf(self.margin) else float(f"{self.margin:.6g}")},
            "parameters": {k: str(v) for k, v in sorted(self.params.items())},
            "parameter_conditional": self.parameter_conditional,
            "members": [],
        }
        if self.parameter_dimensions:
            out["dimensions_at_other_parameters"] = list(self.parameter_dimensions)
        for m in self.members:
            entry = {"status": m.status,
                     "coefficients": {labels[i]: str(c) for i, c in enumerate(m.vector) if c != 0}}
            if m.witness is not None:
                entry["witness"] = {k: str(v) for k, v in sorted(m.witness.values.items())}
            out["members"].append(entry)
        return out


def _certifier_system(cs: ConditionSet) -> DynamicalSystem:
    sys = cs.sys
    if cs.kind != "kt":
        return sys
    # a Killing tensor is exactly the top coefficient of a geodesic first integral
    return DynamicalSystem(sys.coords, sys.connection, [ZERO] * sys.dim, sys.metric, None,
                           sys.domain, sys.params, sys.name)


def certify_candidate(fi: FICandidate, sys: DynamicalSystem, params: dict, seed: int,
                      samples: int = 16, precision: str = "both"):
    """Zero-test every coefficient of dI/dt; returns (ok, witness)."""
    residual = total_derivative_residual(fi, sys)
    exprs = [v for T in residual for v in T.values() if not v.is_zero_literal]
    if not exprs:
        return True, None
    verdicts = zero_test(exprs, _with_time(sys.domain), samples=samples, seed=seed,
                         fixed=params, precision=precision)
    for v in verdicts:
        if not v.zero:
            return False, v.witness
    return True, None


def _with_time(domain: Domain) -> Domain:
    if TIME in domain.boxes:
        return domain
    boxes = dict(domain.boxes)
    boxes[TIME] = (Fraction(0), Fraction(1))
    return Domain(boxes, domain.constraints, domain.param_names)


def draw_parameters(sys: DynamicalSystem, rng) -> dict:
    """Generic rational values for the free parameters (coarse grid)."""
    names = [p for p in sys.params if p in sys.domain.boxes]
    missing = [p for p in sys.params if p not in sys.domain.boxes]
    if missing:
        raise ValueError(f"free parameters without a range: {missing}")
    if not names:
        return {}
    pts = sample_points(Domain({k: sys.domain.boxes[k] for k in names}, [], frozenset(names)),
                        1, rng, names=names)
    return {k: v[0] for k, v in pts.items()}


def _kernel_dimension(cs, spec, params, seed, points, precision):
    space = AnsatzSpace(cs, spec, params, seed)
    ls = assemble_linear_system(cs, space, points, seed, precision)
    return len(nullspace(ls).basis)


def solve(cs: ConditionSet, spec: AnsatzSpec, seed: int = 0, points: int | None = None,
          precision: str = "auto", params: dict | None = None, recheck: int = 3, probe: bool = True) -> SolutionFamily:
    """Assemble, take the kernel, canonicalize and certify at fresh points.

    Free parameters are drawn as generic rationals unless ``params`` fixes
    them; with ``recheck`` the kernel dimension is recomputed at other draws
    to flag families that only exist for special parameter values.
    """
    sys = cs.sys
    rng = np.random.default_rng([seed, 101])
    if params is None:
        params = draw_parameters(sys, rng)
    else:
        params = {k: Fraction(v) for k, v in params.items()}
    space = AnsatzSpace(cs, spec, params, seed)
    if probe:
        probe_linearity(cs, space, seed)
    ls = assemble_linear_system(cs, space, points, seed, precision)
    ns = nullspace(ls)
    cert_sys = _certifier_system(cs)
    cert_seed = seed + 1000003
    members = []
    if ns.exact:
        canon = _rref_fraction(ns.basis, space.size) if ns.basis else []
        for vec in canon:
            members.append(_certified_member(cs, space, vec, cert_sys, params, cert_seed, "both"))
    elif ns.basis:
        K = _rref_float(np.array(ns.basis))
        for row in K:
            vec = [_rationalize(x) for x in row]
            m = _certified_member(cs, space, vec, cert_sys, params, cert_seed, "both")
            if m.status == "spurious":
                raw = [Fraction(float(x)) if abs(x) > 1e-13 else Fraction(0) for x in row]
                m2 = _certified_member(cs, space, raw, cert_sys, params, cert_seed, "double")
                if m2.status == "certified":
                    m2.status = "floating"
                    m = m2
            members.append(m)
    dims = []
    if recheck and params:
        for k in range(recheck):
            other = draw_parameters(sys, np.random.default_rng([seed, 202, k]))
            try:
                dims.append(_kernel_dimension(cs, spec, other, seed + 17 * (k + 1), points, precision))
            except IllConditionedError:
                dims.append(-1)
    return SolutionFamily(members, space, cs, ns.exact, ns.rank, ns.margin, ls.rows, params, seed, dims)


def _certified_member(cs, space, vec, cert_sys, params, seed, precision):
    fields = space.fields(vec)
    _, template = cs.instantiate(fields)
    ok, witness = certify_candidate(template, cert_sys, params, seed, precision=precision)
    return Member(list(vec), fields, template, "certified" if ok else "spurious", witness)
