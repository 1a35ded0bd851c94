"""Independent oracles shared by the tests (sympy and plain numerics)."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
import sympy as sp

from firstint.expr import Add, Const, Exp, Mul, Pow, Sym


def to_sympy(e, cache=None):
    """Convert an expression tree to sympy without going through text."""
    cache = {} if cache is None else cache
    hit = cache.get(e)
    if hit is not None:
        return hit
    if isinstance(e, Const):
        out = sp.Rational(e.value.numerator, e.value.denominator)
    elif isinstance(e, Sym):
        out = sp.Symbol(e.name.replace("'", "_dot"))
    elif isinstance(e, Add):
        out = sp.Add(*(to_sympy(t, cache) for t in e.terms))
    elif isinstance(e, Mul):
        out = sp.Mul(*(to_sympy(f, cache) for f in e.factors))
    elif isinstance(e, Pow):
        out = sp.Pow(to_sympy(e.base, cache), sp.Rational(e.exp.numerator, e.exp.denominator))
    elif isinstance(e, Exp):
        out = sp.exp(to_sympy(e.arg, cache))
    else:
        raise TypeError(type(e))
    cache[e] = out
    return out


def sympy_time_derivative(fi, sys):
    """dI/dt along q'' = -Gamma q' q' - Q computed entirely in sympy."""
    q = [sp.Symbol(c) for c in sys.coords]
    v = [sp.Symbol(c + "_dot") for c in sys.coords]
    t = sp.Symbol("t")
    I = to_sympy(fi.expression())
    n = sys.dim
    acc = []
    for a in range(n):
        e = -to_sympy(sys.forces[a])
        for b in range(n):
            for c in range(n):
                e -= to_sympy(sys.connection(a, min(b, c), max(b, c))) * v[b] * v[c]
        acc.append(e)
    return sp.diff(I, t) + sum(sp.diff(I, q[a]) * v[a] + sp.diff(I, v[a]) * acc[a] for a in range(n))


def sympy_values(expr, points):
    """Evaluate a sympy expression at a list of {name: Fraction} points (floats out)."""
    syms = sorted(expr.free_symbols, key=lambda s: s.name)
    f = sp.lambdify(syms, expr, "mpmath")
    out = []
    for p in points:
        args = [sp.Rational(p[s.name].numerator, p[s.name].denominator) if isinstance(p[s.name], Fraction)
                else p[s.name] for s in syms]
        out.append(complex(f(*args)))
    return np.array(out)


def random_points(names_ranges, count, seed):
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(count):
        pts.append({k: Fraction(int(rng.integers(0, 1025)), 1024) * (hi - lo) + lo
                    for k, (lo, hi) in names_ranges.items()})
    return pts
