"""Vectorised numeric evaluation of expression DAGs.

Three precisions are supported:

``double``    numpy float64 arrays;
``extended``  numpy object arrays of mpmath floats at 113 bits;
``exact``     numpy object arrays of :class:`fractions.Fraction`.

Shared subtrees are evaluated once per call.
"""
from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np

from .nodes import Add, Const, Exp, Mul, Pow, Sym, Unknown

__all__ = ["evaluate", "EvaluationError", "NotExactError", "EXTENDED_BITS"]

EXTENDED_BITS = 113


class EvaluationError(ArithmeticError):
    """Division by zero, negative base with fractional exponent, or a missing value."""


class NotExactError(EvaluationError):
    """The expression cannot be evaluated in exact rational arithmetic."""


class _Double:
    name = "double"

    @staticmethod
    def convert(v):
        if isinstance(v, np.ndarray) and v.dtype == object:
            return np.array([float(x) for x in v.ravel()]).reshape(v.shape)
        if isinstance(v, (list, tuple)):
            return np.array([float(x) for x in v])
        return np.asarray(float(v)) if not isinstance(v, np.ndarray) else v.astype(float)

    @staticmethod
    def const(c: Fraction):
        return float(c)

    @staticmethod
    def pow(x, e: Fraction):
        if e.denominator != 1 and np.any(np.asarray(x) < 0):
            raise EvaluationError("negative base with fractional exponent")
        if e < 0 and np.any(np.asarray(x) == 0):
            raise EvaluationError("division by zero")
        if e.denominator == 1:
            return np.power(x, float(e)) if e < 0 else x ** int(e)
        return np.power(x, float(e))

    @staticmethod
    def exp(x):
        return np.exp(x)

    @staticmethod
    def finish(v):
        v = np.asarray(v, dtype=float)
        return v


_mp_exp = np.frompyfunc(mpmath.exp, 1, 1)


class _Extended:
    name = "extended"

    @staticmethod
    def convert(v):
        arr = np.asarray(v, dtype=object)
        flat = [_to_mpf(x) for x in arr.ravel()]
        if not arr.shape:
            return flat[0]
        out = np.empty(len(flat), dtype=object)
        out[:] = flat
        return out.reshape(arr.shape)

    @staticmethod
    def const(c: Fraction):
        return mpmath.mpf(c.numerator) / c.denominator

    @staticmethod
    def pow(x, e: Fraction):
        xa = np.asarray(x, dtype=object)
        if e.denominator != 1 and any(v < 0 for v in xa.ravel()):
            raise EvaluationError("negative base with fractional exponent")
        if e < 0 and any(v == 0 for v in xa.ravel()):
            raise EvaluationError("division by zero")
        if e.denominator == 1:
            return x ** int(e)
        ee = mpmath.mpf(e.numerator) / e.denominator
        return np.frompyfunc(lambda v: mpmath.power(v, ee), 1, 1)(x)

    @staticmethod
    def exp(x):
        return _mp_exp(x)

    @staticmethod
    def finish(v):
        return np.asarray(v, dtype=object)


def _to_mpf(x):
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    if isinstance(x, (int, np.integer)):
        return mpmath.mpf(int(x))
    return mpmath.mpf(x)


class _Exact:
    name = "exact"

    @staticmethod
    def convert(v):
        arr = np.asarray(v, dtype=object)
        flat = []
        for x in arr.ravel():
            if isinstance(x, (float, np.floating)):
                raise NotExactError("floating-point input in exact evaluation")
            flat.append(Fraction(x))
        if not arr.shape:
            return flat[0]
        out = np.empty(len(flat), dtype=object)
        out[:] = flat
        return out.reshape(arr.shape)

    @staticmethod
    def const(c: Fraction):
        return c

    @staticmethod
    def pow(x, e: Fraction):
        if e.denominator != 1:
            raise NotExactError("fractional power")
        xa = np.asarray(x, dtype=object)
        if e < 0 and any(v == 0 for v in xa.ravel()):
            raise EvaluationError("division by zero")
        return x ** int(e)

    @staticmethod
    def exp(x):
        raise NotExactError("exponential")

    @staticmethod
    def finish(v):
        return np.asarray(v, dtype=object)


def _broadcast(v, shape):
    if v.shape == shape:
        return v
    out = np.empty(shape, dtype=v.dtype)
    out[...] = v
    return out


BACKENDS = {"double": _Double, "extended": _Extended, "exact": _Exact}


def evaluate(exprs, env: dict, precision: str = "double", magnitude: bool = False):
    """Evaluate a list of expressions on the (broadcast) values in ``env``.

    Returns a list of arrays. With ``magnitude=True`` (double only) also returns
    the pointwise maximum absolute value over every intermediate node, which
    is the scale used by the zero test.
    """
    backend = BACKENDS[precision]
    if magnitude and precision != "double":
        raise ValueError("magnitude tracking is only available in double precision")
    values = {k: backend.convert(v) for k, v in env.items()}
    shape = ()
    for v in values.values():
        if np.ndim(v) > len(shape):
            shape = np.shape(v)
    memo: dict = {}
    mag = [0.0]

    def go(e):
        hit = memo.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Const):
            out = backend.const(e.value)
        elif isinstance(e, Sym):
            try:
                out = values[e.name]
            except KeyError:
                raise EvaluationError(f"unassigned symbol {e.name!r}") from None
        elif isinstance(e, Add):
            it = iter(e.terms)
            out = go(next(it))
            for t in it:
                out = out + go(t)
        elif isinstance(e, Mul):
            it = iter(e.factors)
            out = go(next(it))
            for f in it:
                out = out * go(f)
        elif isinstance(e, Pow):
            out = backend.pow(go(e.base), e.exp)
        elif isinstance(e, Exp):
            out = backend.exp(go(e.arg))
        elif isinstance(e, Unknown):
            raise EvaluationError(f"cannot evaluate unknown {e.slot}")
        else:  # pragma: no cover
            raise TypeError(type(e))
        if magnitude:
            mag[0] = np.maximum(mag[0], np.abs(out))
        memo[e] = out
        return out

    with mpmath.workprec(EXTENDED_BITS):
        with np.errstate(all="ignore"):
            results = [_broadcast(backend.finish(go(e)), shape) for e in exprs]
    if precision == "double":
        for r in results:
            if not np.all(np.isfinite(r)):
                raise EvaluationError("non-finite value during evaluation")
    if magnitude:
        return results, np.asarray(mag[0], dtype=float)
    return results
