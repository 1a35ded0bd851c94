"""Immutable expression trees with light canonical simplification.

Every node is built through the smart constructors (:func:`add`, :func:`mul`,
:func:`power`, :func:`exp`), which flatten, merge rational constants, collect
like terms and combine powers of identical bases. Nothing stronger than that
is attempted; zero testing is done by sampling (see :mod:`firstint.expr.sampling`).
"""
from __future__ import annotations

from fractions import Fraction
from numbers import Rational

__all__ = [
    "Expr", "Const", "Sym", "Unknown", "Add", "Mul", "Pow", "Exp",
    "as_expr", "const", "sym", "add", "mul", "power", "exp", "diff",
    "subs", "free_symbols", "ZERO", "ONE",
]

# kind tags double as the primary sort key
_CONST, _SYM, _UNKNOWN, _EXP, _POW, _MUL, _ADD = range(7)


class Expr:
    """Base class. Equality and hashing are structural."""

    __slots__ = ("key", "_hash", "_free", "_dcache")

    def __init__(self, key):
        self.key = key
        self._hash = hash(key)
        self._free = None
        self._dcache = None

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self._hash == other._hash and self.key == other.key

    def __lt__(self, other):
        return self.key < other.key

    def __repr__(self):
        from .printer import to_text
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        from .printer import to_text
        return to_text(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, mul(Const.MINUS_ONE, as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), mul(Const.MINUS_ONE, self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), -1))

    def __rtruediv__(self, other):
        return mul(as_expr(other), power(self, -1))

    def __neg__(self):
        return mul(Const.MINUS_ONE, self)

    def __pow__(self, exponent):
        if isinstance(exponent, Const):
            exponent = exponent.value
        return power(self, Fraction(exponent))

    @property
    def is_zero_literal(self):
        return self.key[0] == _CONST and self.key[1] == 0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        value = Fraction(value)
        super().__init__((_CONST, value))
        self.value = value


Const.MINUS_ONE = Const(-1)
ZERO = Const(0)
ONE = Const(1)


class Sym(Expr):
    """Named symbol: a coordinate, the time variable or a parameter."""

    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__((_SYM, name))
        self.name = name


class Unknown(Expr):
    """Placeholder for an unknown function component and its partial derivatives.

    ``derivs`` is a sorted tuple of symbol names; ``deps`` the symbols the
    function depends on. Unknowns cannot be evaluated.
    """

    __slots__ = ("slot", "index", "derivs", "deps")

    def __init__(self, slot, index, deps, derivs=()):
        deps = tuple(deps)
        derivs = tuple(sorted(derivs))
        super().__init__((_UNKNOWN, slot, tuple(index), derivs, deps))
        self.slot = slot
        self.index = tuple(index)
        self.derivs = derivs
        self.deps = deps


class Exp(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        super().__init__((_EXP, arg.key))
        self.arg = arg


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base, exponent):
        super().__init__((_POW, base.key, exponent))
        self.base = base
        self.exp = exponent


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        super().__init__((_MUL, tuple(f.key for f in factors)))
        self.factors = factors


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        super().__init__((_ADD, tuple(t.key for t in terms)))
        self.terms = terms


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Rational)) and not isinstance(x, bool):
        return Const(x)
    raise TypeError(f"cannot use {type(x).__name__} {x!r} as an exact expression")


def const(value) -> Const:
    return Const(value)


def sym(name: str) -> Sym:
    return Sym(name)


# ---------------------------------------------------------------- constructors

def _split_coeff(e):
    """Return (rational coefficient, remaining non-constant factor)."""
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        return e.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), e


def _with_coeff(c, rest):
    if c == 1:
        return rest
    factors = rest.factors if isinstance(rest, Mul) else (rest,)
    return Mul((Const(c),) + tuple(factors))


def add(*args) -> Expr:
    constant = Fraction(0)
    terms: dict = {}
    stack = list(reversed(args))
    while stack:
        a = stack.pop()
        if isinstance(a, Const):
            constant += a.value
        elif isinstance(a, Add):
            stack.extend(reversed(a.terms))
        else:
            c, rest = _split_coeff(a)
            prev = terms.get(rest)
            terms[rest] = c if prev is None else prev + c
    out = [_with_coeff(c, rest) for rest, c in terms.items() if c != 0]
    if not out:
        return Const(constant)
    out.sort(key=lambda e: e.key)
    if constant != 0:
        out.insert(0, Const(constant))
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def mul(*args) -> Expr:
    c = Fraction(1)
    powers: dict = {}
    exp_args = []
    stack = list(reversed(args))
    while stack:
        a = stack.pop()
        if isinstance(a, Const):
            c *= a.value
            if c == 0:
                return ZERO
        elif isinstance(a, Mul):
            stack.extend(reversed(a.factors))
        elif isinstance(a, Pow):
            powers[a.base] = powers.get(a.base, 0) + a.exp
        elif isinstance(a, Exp):
            exp_args.append(a.arg)
        else:
            powers[a] = powers.get(a, 0) + 1
    factors = []
    for base, e in powers.items():
        if e == 0:
            continue
        f = power(base, e)
        if isinstance(f, Const):
            c *= f.value
        elif isinstance(f, Mul):
            for g in f.factors:
                if isinstance(g, Const):
                    c *= g.value
                else:
                    factors.append(g)
        else:
            factors.append(f)
    if exp_args:
        s = add(*exp_args)
        if not s.is_zero_literal:
            factors.append(Exp(s))
    if c == 0:
        return ZERO
    if not factors:
        return Const(c)
    if c != 1 and len(factors) == 1 and isinstance(factors[0], Add):
        # distribute rational constants so that negated sums cancel
        return add(*(mul(Const(c), t) for t in factors[0].terms))
    factors.sort(key=lambda e: e.key)
    if c == 1 and len(factors) == 1:
        return factors[0]
    if c != 1:
        factors.insert(0, Const(c))
    return Mul(tuple(factors))


def _iroot(k: int, n: int):
    """Exact integer n-th root of k >= 0, or None."""
    if k < 2:
        return k
    r = int(round(k ** (1.0 / n))) if k < 2 ** 1000 else None
    if r is None:
        # Newton iteration for huge integers
        r = 1 << ((k.bit_length() + n - 1) // n)
        while True:
            nr = ((n - 1) * r + k // r ** (n - 1)) // n
            if nr >= r:
                break
            r = nr
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand ** n == k:
            return cand
    return None


def _const_power(v: Fraction, e: Fraction):
    if e.denominator == 1:
        if v == 0 and e < 0:
            raise ZeroDivisionError("zero raised to a negative power")
        return Const(v ** int(e))
    if v == 0:
        return ZERO if e > 0 else None
    if v < 0:
        return None
    p = _iroot(v.numerator, e.denominator)
    q = _iroot(v.denominator, e.denominator)
    if p is None or q is None:
        return None
    return Const(Fraction(p, q) ** e.numerator)


def power(base, exponent) -> Expr:
    base = as_expr(base)
    e = Fraction(exponent)
    if e == 0:
        return ONE
    if e == 1:
        return base
    if isinstance(base, Const):
        folded = _const_power(base.value, e)
        return folded if folded is not None else Pow(base, e)
    if isinstance(base, Pow) and e.denominator == 1:
        return power(base.base, base.exp * e)
    if isinstance(base, Mul) and e.denominator == 1:
        return mul(*(power(f, e) for f in base.factors))
    if isinstance(base, Exp):
        return exp(mul(Const(e), base.arg))
    return Pow(base, e)


def exp(arg) -> Expr:
    arg = as_expr(arg)
    if arg.is_zero_literal:
        return ONE
    return Exp(arg)


# ------------------------------------------------------------- free symbols

def free_symbols(e: Expr) -> frozenset:
    if e._free is not None:
        return e._free
    if isinstance(e, Const):
        out = frozenset()
    elif isinstance(e, Sym):
        out = frozenset((e.name,))
    elif isinstance(e, Unknown):
        out = frozenset(e.deps)
    elif isinstance(e, Exp):
        out = free_symbols(e.arg)
    elif isinstance(e, Pow):
        out = free_symbols(e.base)
    else:
        children = e.terms if isinstance(e, Add) else e.factors
        out = frozenset().union(*(free_symbols(c) for c in children))
    e._free = out
    return out


# ----------------------------------------------------------- differentiation

def diff(e: Expr, var: str, times: int = 1) -> Expr:
    """Exact partial derivative of ``e`` with respect to the symbol ``var``."""
    for _ in range(times):
        e = _diff1(e, var)
    return e


def _diff1(e, var):
    if var not in free_symbols(e):
        return ZERO
    cache = e._dcache
    if cache is None:
        cache = e._dcache = {}
    hit = cache.get(var)
    if hit is not None:
        return hit
    if isinstance(e, Sym):
        out = ONE
    elif isinstance(e, Unknown):
        out = Unknown(e.slot, e.index, e.deps, e.derivs + (var,))
    elif isinstance(e, Add):
        out = add(*(_diff1(t, var) for t in e.terms))
    elif isinstance(e, Mul):
        fs = e.factors
        parts = []
        for i, f in enumerate(fs):
            df = _diff1(f, var)
            if df.is_zero_literal:
                continue
            parts.append(mul(*fs[:i], df, *fs[i + 1:]))
        out = add(*parts)
    elif isinstance(e, Pow):
        out = mul(Const(e.exp), power(e.base, e.exp - 1), _diff1(e.base, var))
    elif isinstance(e, Exp):
        out = mul(e, _diff1(e.arg, var))
    else:  # pragma: no cover
        raise TypeError(type(e))
    cache[var] = out
    return out


# -------------------------------------------------------------- substitution

def subs(e: Expr, mapping: dict) -> Expr:
    """Replace symbols by expressions. ``mapping`` is keyed by symbol name."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    if not mapping:
        return e
    memo: dict = {}

    def go(x):
        if not (free_symbols(x) & mapping.keys()):
            return x
        hit = memo.get(x)
        if hit is not None:
            return hit
        if isinstance(x, Sym):
            out = mapping[x.name]
        elif isinstance(x, Add):
            out = add(*(go(t) for t in x.terms))
        elif isinstance(x, Mul):
            out = mul(*(go(f) for f in x.factors))
        elif isinstance(x, Pow):
            out = power(go(x.base), x.exp)
        elif isinstance(x, Exp):
            out = exp(go(x.arg))
        else:
            raise TypeError(f"cannot substitute into {type(x).__name__}")
        memo[x] = out
        return out

    return go(e)
