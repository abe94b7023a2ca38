"""Scalar expressions, vector fields, Lie brackets and bracket flags."""

from .fields import (
    RANK_RTOL,
    Frame2,
    FrameDegeneracyError,
    RankAmbiguityError,
    VectorField,
    bracket_flag_dim,
    iterated_brackets,
    lie_bracket,
)
from .nodes import (
    ONE,
    ZERO,
    EvaluationError,
    Expr,
    as_expr,
    call,
    compile_exprs,
    const,
    differentiate,
    evaluate,
    var,
)
from .parser import ExprSyntaxError, UnknownIdentifierError, VariableIndexError, parse_expr

__all__ = [
    "Expr",
    "EvaluationError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "VariableIndexError",
    "Frame2",
    "FrameDegeneracyError",
    "RankAmbiguityError",
    "VectorField",
    "RANK_RTOL",
    "ONE",
    "ZERO",
    "as_expr",
    "bracket_flag_dim",
    "call",
    "compile_exprs",
    "const",
    "differentiate",
    "evaluate",
    "iterated_brackets",
    "lie_bracket",
    "parse_expr",
    "var",
]
