"""Exact expression trees: parsing, printing, differentiation and evaluation."""
from .compile import compile_exprs
from .evaluate import EXTENDED_BITS, EvaluationError, NotExactError, evaluate
from .nodes import (
    ONE, ZERO, Add, Const, Exp, Expr, Mul, Pow, Sym, Unknown, add, as_expr,
    const, diff, exp, free_symbols, mul, power, subs, sym,
)
from .parser import ExprSyntaxError, parse
from .printer import to_text
from .sampling import (
    Domain, DomainError, SamplePoint, ZeroVerdict, is_zero, sample_points,
    zero_test,
)

__all__ = [
    "Expr", "Const", "Sym", "Unknown", "Add", "Mul", "Pow", "Exp", "ZERO", "ONE",
    "add", "mul", "power", "exp", "const", "sym", "as_expr", "diff", "subs",
    "free_symbols", "parse", "ExprSyntaxError", "to_text", "evaluate",
    "EvaluationError", "NotExactError", "EXTENDED_BITS", "compile_exprs",
    "Domain", "DomainError", "SamplePoint", "ZeroVerdict", "is_zero",
    "zero_test", "sample_points",
]
