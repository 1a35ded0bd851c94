"""Recursive-descent parser for the expression grammar.

Grammar (whitespace insignificant)::

    sum     := product (("+" | "-") product)*
    product := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?          # right associative
    atom    := NUMBER | IDENT | "exp" "(" sum ")" | "(" sum ")"

Precedence is ``^`` > unary minus > ``* /`` > ``+ -``. Integer, fraction and
decimal literals are kept exact. Exponents must reduce to rational constants.
"""
from __future__ import annotations

import re
from fractions import Fraction

from .nodes import Const, Expr, add, exp, mul, power, sym

__all__ = ["parse", "ExprSyntaxError"]

FUNCTIONS = {"exp": exp}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*'?)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


class ExprSyntaxError(ValueError):
    """Raised on malformed input; ``offset`` is a byte offset into the text."""

    def __init__(self, message, text, char_pos):
        self.offset = len(text[:char_pos].encode("utf-8"))
        self.text = text
        super().__init__(f"{message} at byte {self.offset}")


def _tokenize(text):
    pos = 0
    tokens = []
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            tokens.append(("end", None, pos))
            return tokens
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()


class _Parser:
    def __init__(self, text, symbols=None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.text, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            self.error(f"expected {value!r}", tok)
        return tok

    def parse(self):
        e = self.sum()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return e

    def sum(self):
        e = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.product()
            e = add(e, rhs) if op == "+" else add(e, mul(Const(-1), rhs))
        return e

    def product(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            tok = self.peek()
            rhs = self.unary()
            if op == "*":
                e = mul(e, rhs)
            else:
                if isinstance(rhs, Const) and rhs.value == 0:
                    self.error("zero literal denominator", tok)
                e = mul(e, power(rhs, -1))
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return mul(Const(-1), self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            ex = self.unary()
            if not isinstance(ex, Const):
                self.error("exponent must reduce to a rational constant", tok)
            try:
                return power(base, ex.value)
            except ZeroDivisionError:
                self.error("zero raised to a negative power", tok)
        return base

    def atom(self):
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            return Const(Fraction(val))
        if kind == "ident":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                fn = FUNCTIONS.get(val)
                if fn is None:
                    self.error(f"unknown function {val!r}", tok)
                self.take()
                arg = self.sum()
                self.expect(")")
                return fn(arg)
            if self.symbols is not None and val not in self.symbols:
                self.error(f"unknown identifier {val!r}", tok)
            return sym(val)
        if kind == "op" and val == "(":
            e = self.sum()
            self.expect(")")
            return e
        if kind == "end":
            self.error("unexpected end of input", tok)
        self.error(f"unexpected {val!r}", tok)


def parse(text: str, symbols=None) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    If ``symbols`` is given, identifiers outside that collection are rejected.
    """
    return _Parser(text, symbols).parse()
