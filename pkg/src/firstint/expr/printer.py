"""Grammar-compatible text rendering of expressions."""
from __future__ import annotations

from fractions import Fraction

from .nodes import Add, Const, Exp, Mul, Pow, Sym, Unknown

# binding strength of the rendered string
_ADD, _MUL, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


def to_text(e) -> str:
    return _render(e)[0]


def _frac(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _wrap(pair, min_level):
    s, level = pair
    return s if level >= min_level else f"({s})"


def _render(e):
    if isinstance(e, Const):
        v = e.value
        if v < 0:
            return "-" + _wrap(_render(Const(-v)), _MUL), _NEG
        if v.denominator != 1:
            return _frac(v), _MUL
        return str(v.numerator), _ATOM
    if isinstance(e, Sym):
        return e.name, _ATOM
    if isinstance(e, Unknown):
        idx = ",".join(str(i + 1) for i in e.index)
        s = f"{e.slot}[{idx}]"
        if e.derivs:
            s = f"d[{','.join(e.derivs)}]{s}"
        return s, _ATOM
    if isinstance(e, Exp):
        return f"exp({to_text(e.arg)})", _ATOM
    if isinstance(e, Pow):
        base = _wrap(_render(e.base), _ATOM)
        x = e.exp
        if x.denominator == 1 and x > 0:
            return f"{base}^{x.numerator}", _POW
        return f"{base}^({_frac(x)})", _POW
    if isinstance(e, Mul):
        return _render_mul(e)
    if isinstance(e, Add):
        consts = [t for t in e.terms if isinstance(t, Const)]
        others = [t for t in e.terms if not isinstance(t, Const)]
        parts = []
        for i, t in enumerate(others + consts):
            neg, mag = _negated(t)
            body = _wrap(_render(mag), _MUL)
            if i == 0:
                parts.append(("-" + body) if neg else body)
            else:
                parts.append((" - " if neg else " + ") + body)
        return "".join(parts), _ADD
    raise TypeError(type(e))


def _negated(t):
    """Split a term into (is_negative, magnitude)."""
    if isinstance(t, Const) and t.value < 0:
        return True, Const(-t.value)
    if isinstance(t, Mul) and isinstance(t.factors[0], Const) and t.factors[0].value < 0:
        from .nodes import mul
        return True, mul(Const(-1), t)
    return False, t


def _render_mul(e):
    c = Fraction(1)
    num, den = [], []
    for f in e.factors:
        if isinstance(f, Const):
            c = f.value
        elif isinstance(f, Pow) and f.exp < 0:
            inv = f.base if f.exp == -1 else Pow(f.base, -f.exp)
            den.append(inv)
        else:
            num.append(f)
    sign = "-" if c < 0 else ""
    c = abs(c)
    num_s = [_wrap(_render(f), _NEG + 1) for f in num]
    if c.numerator != 1 or not num_s:
        num_s.insert(0, str(c.numerator))
    den_s = [_wrap(_render(f), _NEG + 1) for f in den]
    if c.denominator != 1:
        den_s.insert(0, str(c.denominator))
    s = "*".join(num_s)
    if den_s:
        d = den_s[0] if len(den_s) == 1 else "(" + "*".join(den_s) + ")"
        s = f"{s}/{d}"
    if sign:
        return sign + s, _NEG
    level = _MUL if ("*" in s or "/" in s) else _ATOM
    return s, level
