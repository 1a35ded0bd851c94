"""Compile expression lists to plain Python functions for hot loops.

Shared subexpressions become local temporaries, so a right-hand side with
many Christoffel symbols is evaluated with one pass over its DAG.
"""
from __future__ import annotations

import math

import numpy as np

from .nodes import Add, Const, Exp, Mul, Pow, Sym, Unknown

__all__ = ["compile_exprs"]


def _rpow(x, e):
    if x < 0:
        raise ValueError("negative base with fractional exponent")
    return x ** e


def _np_rpow(x, e):
    with np.errstate(invalid="ignore"):
        return np.where(x < 0, np.nan, np.power(np.abs(x), e))


def compile_exprs(exprs, argnames, target: str = "math"):
    """Return ``f(*args) -> list`` evaluating ``exprs``.

    ``target="math"`` works on Python floats and raises ``ValueError`` or
    ``ZeroDivisionError`` outside the real domain; ``target="numpy"``
    broadcasts over arrays and yields ``nan``/``inf`` instead.
    """
    argnames = list(argnames)
    names = {a: f"_a{i}" for i, a in enumerate(argnames)}
    lines = []
    memo = {}
    counter = [0]

    def emit(code):
        tmp = f"_t{counter[0]}"
        counter[0] += 1
        lines.append(f"    {tmp} = {code}")
        return tmp

    def go(e):
        hit = memo.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Const):
            out = repr(float(e.value))
        elif isinstance(e, Sym):
            if e.name not in names:
                raise KeyError(f"symbol {e.name!r} is not an argument")
            out = names[e.name]
        elif isinstance(e, Unknown):
            raise TypeError("cannot compile an unknown function")
        elif isinstance(e, Add):
            out = emit(" + ".join(go(t) for t in e.terms))
        elif isinstance(e, Mul):
            out = emit(" * ".join(go(f) for f in e.factors))
        elif isinstance(e, Pow):
            b = go(e.base)
            x = e.exp
            if x.denominator == 1:
                if target == "numpy" and x < 0:
                    out = emit(f"_power({b}, {float(x)!r})")
                else:
                    out = emit(f"{b} ** {x.numerator}" if x > 0 else f"1.0 / {b} ** {-x.numerator}")
            else:
                out = emit(f"_rpow({b}, {float(x)!r})")
        elif isinstance(e, Exp):
            out = emit(f"_exp({go(e.arg)})")
        else:  # pragma: no cover
            raise TypeError(type(e))
        memo[e] = out
        return out

    results = [go(e) for e in exprs]
    header = f"def _compiled({', '.join(names[a] for a in argnames)}):"
    src = "\n".join([header] + lines + [f"    return [{', '.join(results)}]"])
    if target == "math":
        ns = {"_rpow": _rpow, "_exp": math.exp}
    elif target == "numpy":
        ns = {"_rpow": _np_rpow, "_exp": np.exp, "_power": np.power}
    else:
        raise ValueError(f"unknown target {target!r}")
    exec(compile(src, "<firstint-compiled>", "exec"), ns)
    fn = ns["_compiled"]
    fn.source = src
    return fn
