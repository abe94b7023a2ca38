"""Expression trees for coefficient functions of chart coordinates.

Nodes are hash-consed: structurally equal trees are the same object, so a
tree behaves like a DAG, equality is identity, and derivatives are memoised
per node.  Every constructor goes through the folding helpers (``add``,
``mul``, ...), which perform constant folding and zero/one elimination and
nothing else.
"""

from __future__ import annotations

import math
import threading
import weakref
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "EvaluationError",
    "FUNCTIONS",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "power",
    "neg",
    "call",
    "as_expr",
    "differentiate",
    "evaluate",
    "compile_exprs",
    "ZERO",
    "ONE",
]

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

_TABLE: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()
_LOCK = threading.Lock()


class EvaluationError(ArithmeticError):
    """Raised when an expression cannot be evaluated (division by zero, sqrt of a negative...)."""


_CLASS_IDS = {n: i for i, n in enumerate(("Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call"))}


def _structural_key(clsname: str, args) -> int:
    """Process-independent hash used to order commutative operands."""
    parts = [_CLASS_IDS[clsname]]
    for a in args:
        if isinstance(a, Expr):
            parts.append(a._skey)
        elif isinstance(a, str):
            parts.append(FUNCTIONS.index(a))
        else:
            parts.append(hash(a))
    return hash(tuple(parts))


class Expr:
    __slots__ = ("args", "_dcache", "_maxvar", "_skey", "__weakref__")

    prec = 5

    def __new__(cls, *args):
        key = (cls,) + args
        with _LOCK:
            node = _TABLE.get(key)
            if node is None:
                node = object.__new__(cls)
                node.args = args
                node._dcache = {}
                node._maxvar = cls._compute_maxvar(args)
                node._skey = _structural_key(cls.__name__, args)
                _TABLE[key] = node
        return node

    @staticmethod
    def _compute_maxvar(args) -> int:
        return max((a._maxvar for a in args if isinstance(a, Expr)), default=0)

    @property
    def max_var(self) -> int:
        """Largest variable index occurring in the tree (0 for constants)."""
        return self._maxvar

    def is_const(self, value=None) -> bool:
        return False

    # arithmetic sugar -------------------------------------------------
    def _binary(self, other, fn, reflected=False):
        try:
            other = as_expr(other)
        except TypeError:
            return NotImplemented
        return fn(other, self) if reflected else fn(self, other)

    def __add__(self, other):
        return self._binary(other, add)

    def __radd__(self, other):
        return self._binary(other, add, True)

    def __sub__(self, other):
        return self._binary(other, sub)

    def __rsub__(self, other):
        return self._binary(other, sub, True)

    def __mul__(self, other):
        return self._binary(other, mul)

    def __rmul__(self, other):
        return self._binary(other, mul, True)

    def __truediv__(self, other):
        return self._binary(other, div)

    def __rtruediv__(self, other):
        return self._binary(other, div, True)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)

    def __str__(self) -> str:
        return _to_text(self)

    def __repr__(self) -> str:
        return f"Expr({_to_text(self)!r})"

    def diff(self, index: int) -> "Expr":
        return differentiate(self, index)

    def __call__(self, point):
        return evaluate(self, point)


class Const(Expr):
    __slots__ = ()

    @property
    def value(self) -> Fraction:
        return self.args[0]

    def is_const(self, value=None) -> bool:
        return value is None or self.args[0] == value

    @property
    def prec(self) -> int:  # type: ignore[override]
        v = self.args[0]
        if v < 0:
            return 3
        if v.denominator != 1:
            return 2
        return 5


class Var(Expr):
    __slots__ = ()

    @staticmethod
    def _compute_maxvar(args) -> int:
        return args[0]

    @property
    def index(self) -> int:
        return self.args[0]


class Neg(Expr):
    __slots__ = ()
    prec = 3


class Add(Expr):
    __slots__ = ()
    prec = 1


class Sub(Expr):
    __slots__ = ()
    prec = 1


class Mul(Expr):
    __slots__ = ()
    prec = 2


class Div(Expr):
    __slots__ = ()
    prec = 2


class Pow(Expr):
    __slots__ = ()
    prec = 4


class Call(Expr):
    __slots__ = ()

    @property
    def name(self) -> str:
        return self.args[0]


# --------------------------------------------------------------------------
# folding constructors


def const(value) -> Const:
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"non-finite constant {value!r}")
    return Const(Fraction(value))


ZERO = const(0)
ONE = const(1)
_MINUS_ONE = const(-1)


def var(index: int) -> Var:
    if index < 1:
        raise ValueError("variable indices start at 1")
    return Var(int(index))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction, float, np.integer, np.floating)):
        return const(value if not isinstance(value, (np.integer, np.floating)) else value.item())
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


def _ordered(a: Expr, b: Expr) -> tuple[Expr, Expr]:
    """Canonical operand order for commutative nodes: constants first, then by structure."""
    if isinstance(b, Const) and not isinstance(a, Const):
        return b, a
    if not isinstance(a, Const) and not isinstance(b, Const) and a._skey > b._skey:
        return b, a
    return a, b


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    if isinstance(b, Neg):
        return sub(a, b.args[0])
    if isinstance(a, Neg) and a.args[0] is b:
        return ZERO
    like = _like_terms(a, b, 1)
    if like is not None:
        return like
    return Add(*_ordered(a, b))


def _coeff_split(e: Expr) -> tuple[Fraction, Expr]:
    if isinstance(e, Mul) and isinstance(e.args[0], Const):
        return e.args[0].value, e.args[1]
    if isinstance(e, Neg):
        c, r = _coeff_split(e.args[0])
        return -c, r
    return Fraction(1), e


def _like_terms(a: Expr, b: Expr, sign: int):
    """c*x + d*x -> (c + d)*x for a shared non-constant factor x."""
    ca, ra = _coeff_split(a)
    cb, rb = _coeff_split(b)
    if ra is not rb or isinstance(ra, Const):
        return None
    return mul(Const(ca + sign * cb), ra)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b is ZERO:
        return a
    if a is ZERO:
        return neg(b)
    if a is b:
        return ZERO
    if isinstance(b, Neg):
        return add(a, b.args[0])
    like = _like_terms(a, b, -1)
    if like is not None:
        return like
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a is ZERO or b is ZERO:
        return ZERO
    if a is ONE:
        return b
    if b is ONE:
        return a
    if a is _MINUS_ONE:
        return neg(b)
    if b is _MINUS_ONE:
        return neg(a)
    if isinstance(a, Call) and isinstance(b, Call) and a.args[0] == b.args[0] == "exp":
        return call("exp", add(a.args[1], b.args[1]))
    return Mul(*_ordered(a, b))


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    if a is ZERO:
        return ZERO
    if b is ONE:
        return a
    return Div(a, b)


def power(a: Expr, n: int) -> Expr:
    if isinstance(n, Fraction):
        if n.denominator != 1:
            raise ValueError("only integer powers are supported")
        n = n.numerator
    if not isinstance(n, (int, np.integer)):
        raise TypeError("exponent must be an integer")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const) and (a.value != 0 or n > 0):
        return Const(a.value**n)
    return Pow(a, n)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.args[0]
    return Neg(a)


_EXACT_FOLDS = {
    ("sin", Fraction(0)): Fraction(0),
    ("cos", Fraction(0)): Fraction(1),
    ("exp", Fraction(0)): Fraction(1),
    ("sqrt", Fraction(0)): Fraction(0),
    ("sqrt", Fraction(1)): Fraction(1),
}


def call(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if isinstance(a, Const):
        folded = _EXACT_FOLDS.get((name, a.value))
        if folded is not None:
            return Const(folded)
        if name == "sqrt" and a.value > 0:
            num, den = math.isqrt(a.value.numerator), math.isqrt(a.value.denominator)
            if num * num == a.value.numerator and den * den == a.value.denominator:
                return Const(Fraction(num, den))
    return Call(name, a)


# --------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, index: int) -> Expr:
    """Exact derivative of ``e`` with respect to ``x{index}``."""
    if index < 1:
        raise ValueError("variable indices start at 1")
    if index > e.max_var:
        return ZERO
    cached = e._dcache.get(index)
    if cached is not None:
        return cached
    d = _diff(e, index)
    e._dcache[index] = d
    return d


def _diff(e: Expr, i: int) -> Expr:
    D = differentiate
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(D(e.args[0], i))
    if isinstance(e, Add):
        a, b = e.args
        return add(D(a, i), D(b, i))
    if isinstance(e, Sub):
        a, b = e.args
        return sub(D(a, i), D(b, i))
    if isinstance(e, Mul):
        a, b = e.args
        return add(mul(D(a, i), b), mul(a, D(b, i)))
    if isinstance(e, Div):
        a, b = e.args
        da, db = D(a, i), D(b, i)
        if db is ZERO:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if isinstance(e, Pow):
        base, n = e.args
        return mul(mul(const(n), power(base, n - 1)), D(base, i))
    if isinstance(e, Call):
        name, a = e.args
        da = D(a, i)
        if da is ZERO:
            return ZERO
        if name == "sin":
            outer = call("cos", a)
        elif name == "cos":
            outer = neg(call("sin", a))
        elif name == "exp":
            outer = e
        else:  # sqrt
            outer = div(ONE, mul(const(2), e))
        return mul(outer, da)
    return ZERO


# --------------------------------------------------------------------------
# printing


def _const_text(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _wrap(child: Expr, min_prec: int) -> str:
    s = _to_text(child)
    return f"({s})" if child.prec < min_prec else s


def _to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return "-" + _wrap(e.args[0], 3)
    if isinstance(e, Add):
        a, b = e.args
        return f"{_wrap(a, 1)} + {_wrap(b, 2)}"
    if isinstance(e, Sub):
        a, b = e.args
        return f"{_wrap(a, 1)} - {_wrap(b, 2)}"
    if isinstance(e, Mul):
        a, b = e.args
        return f"{_wrap(a, 2)}*{_wrap(b, 3)}"
    if isinstance(e, Div):
        a, b = e.args
        return f"{_wrap(a, 2)}/{_wrap(b, 3)}"
    if isinstance(e, Pow):
        base, n = e.args
        return f"{_wrap(base, 5)}^{n}"
    if isinstance(e, Call):
        name, a = e.args
        return f"{name}({_to_text(a)})"
    raise TypeError(type(e))


# --------------------------------------------------------------------------
# numeric evaluation via generated numpy code

_NP_FUNC = {"sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp", "sqrt": "_np.sqrt"}


_MATH_FUNC = {"sin": "_m.sin", "cos": "_m.cos", "exp": "_m.exp", "sqrt": "_m.sqrt"}


def _codegen(exprs: Sequence[Expr], nvars: int, scalar: bool = False, rows: bool = False) -> str:
    names: dict[int, str] = {}
    funcs = _MATH_FUNC if scalar else _NP_FUNC
    lines = [f"def _f(x):"]
    for k in range(nvars):
        lines.append(f"    x{k + 1} = x[{k}]" if scalar or rows else f"    x{k + 1} = x[..., {k}]")
    counter = [0]

    def emit(e: Expr) -> str:
        key = id(e)
        if key in names:
            return names[key]
        if isinstance(e, Const):
            return repr(float(e.value))
        if isinstance(e, Var):
            return f"x{e.index}"
        if isinstance(e, Neg):
            rhs = f"-{emit(e.args[0])}"
        elif isinstance(e, Add):
            rhs = f"{emit(e.args[0])} + {emit(e.args[1])}"
        elif isinstance(e, Sub):
            rhs = f"{emit(e.args[0])} - {emit(e.args[1])}"
        elif isinstance(e, Mul):
            rhs = f"{emit(e.args[0])} * {emit(e.args[1])}"
        elif isinstance(e, Div):
            rhs = f"{emit(e.args[0])} / {emit(e.args[1])}"
        elif isinstance(e, Pow):
            base, n = e.args
            b = emit(base)
            rhs = f"{b} ** {n}" if n > 0 else f"1.0 / ({b} ** {-n})"
        elif isinstance(e, Call):
            rhs = f"{funcs[e.args[0]]}({emit(e.args[1])})"
        else:
            raise TypeError(type(e))
        name = f"t{counter[0]}"
        counter[0] += 1
        lines.append(f"    {name} = {rhs}")
        names[key] = name
        return name

    outs = [emit(e) for e in exprs]
    lines.append("    return (" + ", ".join(outs) + ("," if len(outs) == 1 else "") + ")")
    return "\n".join(lines)


class CompiledExprs:
    """Vectorised evaluator for a fixed tuple of expressions.

    Calling with points of shape ``(..., n)`` returns an array of shape
    ``(len(exprs), ...)``.  Floating-point faults raise :class:`EvaluationError`
    unless ``strict=False``, in which case they propagate as inf/nan values
    (used by batched solvers that mask failed members themselves).
    """

    def __init__(self, exprs: Sequence[Expr], nvars: int):
        self.exprs = tuple(exprs)
        need = max((e.max_var for e in self.exprs), default=0)
        self.nvars = max(nvars, need)
        self.source = _codegen(self.exprs, self.nvars)
        namespace: dict = {"_np": np}
        exec(compile(self.source, "<srclab-expr>", "exec"), namespace)
        self._fn = namespace["_f"]
        self._scalar_fn = None
        self._rows_fn = None

    def rows(self, x):
        """Evaluate on variables stored along the first axis; returns a tuple of outputs.

        Constant outputs come back as Python floats.  No floating-point checks
        are made: callers handle inf/nan themselves.
        """
        if self._rows_fn is None:
            namespace: dict = {"_np": np}
            exec(compile(_codegen(self.exprs, self.nvars, rows=True), "<srclab-expr-rows>", "exec"), namespace)
            self._rows_fn = namespace["_f"]
        with np.errstate(all="ignore"):
            return self._rows_fn(x)

    def scalar(self, point) -> tuple[float, ...]:
        """Fast path for a single point given as a sequence of floats (pure ``math``)."""
        if self._scalar_fn is None:
            namespace: dict = {"_m": math}
            exec(compile(_codegen(self.exprs, self.nvars, True), "<srclab-expr-scalar>", "exec"), namespace)
            self._scalar_fn = namespace["_f"]
        try:
            out = self._scalar_fn(point)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}") from exc
        if not all(math.isfinite(v) for v in out):
            raise EvaluationError("evaluation produced a non-finite value")
        return out

    def __call__(self, points, strict: bool = True) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if x.shape[-1] < self.nvars:
            raise ValueError(f"points have {x.shape[-1]} coordinates, expressions need {self.nvars}")
        shape = x.shape[:-1]
        if not strict:
            with np.errstate(all="ignore"):
                vals = self._fn(x)
            return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals])
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise", under="ignore"):
                vals = self._fn(x)
        except (FloatingPointError, ZeroDivisionError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}") from exc
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals])


_COMPILED: dict[tuple, CompiledExprs] = {}
_COMPILED_LOCK = threading.Lock()


def compile_exprs(exprs: Iterable[Expr], nvars: int = 0) -> CompiledExprs:
    exprs = tuple(exprs)
    key = (exprs, nvars)
    fn = _COMPILED.get(key)
    if fn is None:
        fn = CompiledExprs(exprs, nvars)
        with _COMPILED_LOCK:
            if len(_COMPILED) > 4096:
                _COMPILED.clear()
            _COMPILED[key] = fn
    return fn


def evaluate(e: Expr, point) -> np.ndarray | float:
    """Evaluate ``e`` at a point (shape ``(n,)``) or a batch (shape ``(..., n)``)."""
    x = np.atleast_1d(np.asarray(point, dtype=float))
    out = compile_exprs((e,), x.shape[-1])(x)[0]
    return float(out) if out.ndim == 0 else out
