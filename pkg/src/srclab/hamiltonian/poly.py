"""Functions on T*R^n that are polynomial along the fibres.

A :class:`FiberPoly` is a finite sum ``sum_m c_m(x) p^m`` with expression
coefficients.  The Poisson bracket uses the convention

    {F, G} = sum_k (dF/dp_k dG/dx_k - dF/dx_k dG/dp_k),

under which Hamiltonian lifts intertwine Lie brackets, ``{v_X, v_Y} = v_[X,Y]``,
and ``{p_k, x_k} = +1``.  Along the flow of ``H`` (``x' = dH/dp``,
``p' = -dH/dx``) a function ``G`` changes at the rate ``{H, G}``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..expr import ZERO, Expr, VectorField, as_expr, compile_exprs, differentiate
from ..expr.nodes import add, mul, neg, sub

__all__ = ["FiberPoly", "poisson_bracket", "hamiltonian_lift"]

Monomial = tuple[int, ...]


class FiberPoly:
    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Monomial, Expr] | None = None):
        self.n = int(n)
        clean: dict[Monomial, Expr] = {}
        for mono, coef in (terms or {}).items():
            mono = tuple(int(m) for m in mono)
            if len(mono) != self.n or min(mono, default=0) < 0:
                raise ValueError(f"bad momentum exponent {mono} for dimension {self.n}")
            coef = as_expr(coef)
            if coef.max_var > self.n:
                raise ValueError("coefficient uses a variable beyond the chart dimension")
            if coef is not ZERO:
                clean[mono] = coef
        self.terms = dict(sorted(clean.items()))

    # construction ------------------------------------------------------
    @classmethod
    def zero(cls, n: int) -> "FiberPoly":
        return cls(n)

    @classmethod
    def function(cls, f, n: int) -> "FiberPoly":
        """A fibre-constant function f(x) viewed as a degree-0 element."""
        return cls(n, {(0,) * n: as_expr(f)})

    @classmethod
    def momentum(cls, k: int, n: int) -> "FiberPoly":
        mono = tuple(1 if i == k else 0 for i in range(1, n + 1))
        return cls(n, {mono: as_expr(1)})

    # algebra -------------------------------------------------------------
    def _check(self, other: "FiberPoly") -> None:
        if not isinstance(other, FiberPoly):
            raise TypeError("expected a FiberPoly")
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def _coerce(self, other) -> "FiberPoly":
        if isinstance(other, FiberPoly):
            self._check(other)
            return other
        return FiberPoly.function(as_expr(other), self.n)

    def __add__(self, other) -> "FiberPoly":
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = add(out[m], c) if m in out else c
        return FiberPoly(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "FiberPoly":
        return FiberPoly(self.n, {m: neg(c) for m, c in self.terms.items()})

    def __sub__(self, other) -> "FiberPoly":
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = sub(out[m], c) if m in out else neg(c)
        return FiberPoly(self.n, out)

    def __rsub__(self, other) -> "FiberPoly":
        return self._coerce(other) - self

    def __mul__(self, other) -> "FiberPoly":
        other = self._coerce(other)
        out: dict[Monomial, Expr] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                c = mul(c1, c2)
                out[m] = add(out[m], c) if m in out else c
        return FiberPoly(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "FiberPoly":
        out = FiberPoly.function(1, self.n)
        for _ in range(int(k)):
            out = out * self
        return out

    # structure -----------------------------------------------------------
    @property
    def degree(self) -> int:
        """Maximum momentum degree (-1 for the zero element)."""
        return max((sum(m) for m in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def is_homogeneous(self, degree: int) -> bool:
        return all(sum(m) == degree for m in self.terms)

    def d_dx(self, k: int) -> "FiberPoly":
        return FiberPoly(self.n, {m: differentiate(c, k) for m, c in self.terms.items()})

    def d_dp(self, k: int) -> "FiberPoly":
        out: dict[Monomial, Expr] = {}
        for m, c in self.terms.items():
            e = m[k - 1]
            if e == 0:
                continue
            m2 = m[: k - 1] + (e - 1,) + m[k:]
            out[m2] = mul(as_expr(e), c)
        return FiberPoly(self.n, out)

    # evaluation ----------------------------------------------------------
    def _compiled(self):
        return compile_exprs(tuple(self.terms.values()), self.n)

    def evaluate(self, x, p) -> np.ndarray | float:
        """Value at base points ``x`` and covectors ``p`` (both shape ``(..., n)``)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
        if not self.terms:
            out = np.zeros(shape)
        else:
            coefs = self._compiled()(x)
            out = np.zeros(shape)
            for c, m in zip(coefs, self.terms):
                term = c
                for k, e in enumerate(m):
                    if e:
                        term = term * p[..., k] ** e
                out = out + term
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, x, p):
        return self.evaluate(x, p)

    def fiber_matrix(self, x) -> np.ndarray:
        """Symmetric matrix Q(x) with self(x, p) = p^T Q p; requires homogeneous degree 2."""
        if not self.is_homogeneous(2) and not self.is_zero():
            raise ValueError("fiber_matrix needs a homogeneous quadratic element")
        x = np.asarray(x, dtype=float)
        Q = np.zeros(x.shape[:-1] + (self.n, self.n))
        if self.is_zero():
            return Q
        coefs = self._compiled()(x)
        for c, m in zip(coefs, self.terms):
            idx = [k for k, e in enumerate(m) for _ in range(e)]
            i, j = idx
            if i == j:
                Q[..., i, i] += c
            else:
                Q[..., i, j] += c / 2
                Q[..., j, i] += c / 2
        return Q

    def linear_coefficients(self, x) -> np.ndarray:
        """Vector V(x) with self(x, p) = V . p; requires homogeneous degree 1."""
        if not self.is_homogeneous(1) and not self.is_zero():
            raise ValueError("linear_coefficients needs a homogeneous linear element")
        x = np.asarray(x, dtype=float)
        V = np.zeros(x.shape[:-1] + (self.n,))
        if self.is_zero():
            return V
        coefs = self._compiled()(x)
        for c, m in zip(coefs, self.terms):
            V[..., m.index(1)] += c
        return V

    def __repr__(self) -> str:
        if not self.terms:
            return "FiberPoly(0)"
        parts = []
        for m, c in self.terms.items():
            mono = "*".join(f"p{k + 1}" + (f"^{e}" if e > 1 else "") for k, e in enumerate(m) if e)
            parts.append(f"({c})" + (f"*{mono}" if mono else ""))
        return "FiberPoly(" + " + ".join(parts) + ")"


def poisson_bracket(F: FiberPoly, G: FiberPoly) -> FiberPoly:
    """{F, G} = sum_k dF/dp_k dG/dx_k - dF/dx_k dG/dp_k (exact)."""
    F._check(G)
    out = FiberPoly.zero(F.n)
    if F.terms == G.terms:
        return out
    for k in range(1, F.n + 1):
        out = out + F.d_dp(k) * G.d_dx(k) - F.d_dx(k) * G.d_dp(k)
    return out


def hamiltonian_lift(X: VectorField) -> FiberPoly:
    """v_X(x, p) = <p, X(x)> = sum_i X^i(x) p_i."""
    n = X.dim
    return FiberPoly(
        n, {tuple(1 if i == k else 0 for i in range(n)): c for k, c in enumerate(X.components)}
    )
