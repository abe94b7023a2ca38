"""Metric coefficients, metric Hamiltonians, the normalized contact form and the Reeb field.

Coefficient semantics: ``A = (a11, a12, a22)`` are the coefficients of the
*dual* inner product on covectors restricted to the frame, so that

    h(xi) = a11 v1^2 + 2 a12 v1 v2 + a22 v2^2,   v_i = <xi, f_i>.

If ``G`` is the Gram matrix of (f1, f2) in the metric, then ``A = G^{-1}``;
:meth:`MetricCoeffs.from_gram` performs that inversion symbolically.  Worked
example: the metric in which ``|f1| = 1/2`` and ``|f2| = 1`` has
``G = diag(1/4, 1)`` and therefore ``h = 4 v1^2 + v2^2``.

The metric area form on the distribution evaluates to ``1/sqrt(delta)`` on
the pair (f1, f2), with ``delta = det A``.  The normalized contact form is the
annihilator ``omega`` whose differential equals that area form on the
distribution (positive on the frame's oriented pair), and the Reeb field
``e`` solves ``omega(e) = 1``, ``i_e d omega = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..expr import (
    EvaluationError,
    Expr,
    Frame2,
    RankAmbiguityError,
    VectorField,
    as_expr,
    bracket_flag_dim,
    call,
    compile_exprs,
    differentiate,
    lie_bracket,
    parse_expr,
)
from .poly import FiberPoly, hamiltonian_lift, poisson_bracket

__all__ = [
    "MetricCoeffs",
    "NotPositiveDefiniteError",
    "ContactConditionError",
    "HeisenbergRelationError",
    "ReebSolveError",
    "ContactForm",
    "ReebField",
    "metric_hamiltonian",
    "normalized_contact_form",
    "reeb_field",
    "reeb_lift_formula",
    "frame_lifts",
    "heisenberg_relations_hold",
]


class NotPositiveDefiniteError(ValueError):
    def __init__(self, message: str, point=None):
        self.point = None if point is None else np.asarray(point, dtype=float)
        super().__init__(message if point is None else f"{message} at q = {self.point.tolist()}")


class ContactConditionError(ValueError):
    def __init__(self, message: str, point=None):
        self.point = None if point is None else np.asarray(point, dtype=float)
        super().__init__(message if point is None else f"{message} at q = {self.point.tolist()}")


class HeisenbergRelationError(ValueError):
    pass


class ReebSolveError(ArithmeticError):
    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"Reeb linear system is singular at q = {self.point.tolist()}")


def _coerce(value) -> Expr:
    return parse_expr(value, 3) if isinstance(value, str) else as_expr(value)


@dataclass(frozen=True)
class MetricCoeffs:
    a11: Expr
    a12: Expr
    a22: Expr

    def __post_init__(self):
        for name in ("a11", "a12", "a22"):
            object.__setattr__(self, name, _coerce(getattr(self, name)))

    @classmethod
    def parse(cls, a11: str, a12: str, a22: str, n: int = 3) -> "MetricCoeffs":
        return cls(parse_expr(str(a11), n), parse_expr(str(a12), n), parse_expr(str(a22), n))

    @classmethod
    def identity(cls) -> "MetricCoeffs":
        return cls(1, 0, 1)

    @classmethod
    def from_gram(cls, g11, g12, g22) -> "MetricCoeffs":
        """Dual coefficients from the Gram matrix of the frame (2x2 cofactor inverse)."""
        g11, g12, g22 = _coerce(g11), _coerce(g12), _coerce(g22)
        det = g11 * g22 - g12 * g12
        return cls(g22 / det, -g12 / det, g11 / det)

    @property
    def delta(self) -> Expr:
        return self.a11 * self.a22 - self.a12 * self.a12

    @property
    def components(self) -> tuple[Expr, Expr, Expr]:
        return (self.a11, self.a12, self.a22)

    def is_constant(self) -> bool:
        return all(c.max_var == 0 for c in self.components)

    def scale(self, c) -> "MetricCoeffs":
        c = as_expr(c)
        return MetricCoeffs(c * self.a11, c * self.a12, c * self.a22)

    def evaluate(self, points) -> np.ndarray:
        """Stacked ``(a11, a12, a22)`` at points ``(..., 3)``; returns ``(..., 3)``."""
        pts = np.asarray(points, dtype=float)
        vals = compile_exprs(self.components, 3)(pts)
        return np.moveaxis(vals, 0, -1)

    def matrix(self, points) -> np.ndarray:
        a = self.evaluate(points)
        return np.stack(
            [np.stack([a[..., 0], a[..., 1]], -1), np.stack([a[..., 1], a[..., 2]], -1)], -2
        )

    def check_positive_definite(self, points) -> None:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        try:
            a = self.evaluate(pts)
        except EvaluationError as exc:
            raise NotPositiveDefiniteError(f"metric coefficients not evaluable: {exc}") from exc
        delta = a[:, 0] * a[:, 2] - a[:, 1] ** 2
        bad = np.flatnonzero(~((a[:, 0] > 0) & (delta > 0)))
        if bad.size:
            raise NotPositiveDefiniteError("metric matrix A is not positive definite", pts[bad[0]])


def frame_lifts(frame: Frame2) -> tuple[FiberPoly, FiberPoly]:
    return hamiltonian_lift(frame.f1), hamiltonian_lift(frame.f2)


def metric_hamiltonian(frame: Frame2, A: MetricCoeffs, check: bool = True) -> FiberPoly:
    """h = a11 v1^2 + 2 a12 v1 v2 + a22 v2^2."""
    if check:
        A.check_positive_definite(frame.sample_points(frame.sample))
    v1, v2 = frame_lifts(frame)
    return A.a11 * v1 * v1 + 2 * A.a12 * v1 * v2 + A.a22 * v2 * v2


def _cross(u, v):
    return (
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    )


def _dot(u, v) -> Expr:
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


@dataclass(frozen=True)
class ContactForm:
    """A covector field ``omega`` on the chart together with the frame it annihilates."""

    components: tuple[Expr, Expr, Expr]
    frame: Frame2
    metric: MetricCoeffs
    rho: Expr
    _d: tuple = field(default=(), compare=False, repr=False)

    def pair(self, X: VectorField) -> Expr:
        """<omega, X> as an expression."""
        return _dot(self.components, X.components)

    def d_components(self) -> tuple[Expr, Expr, Expr]:
        """Axial vector k = (domega_23, domega_31, domega_12) of the 2-form d omega."""
        if not self._d:
            w = self.components
            d = lambda i, j: differentiate(w[j - 1], i) - differentiate(w[i - 1], j)  # noqa: E731
            object.__setattr__(self, "_d", (d(2, 3), d(3, 1), d(1, 2)))
        return self._d

    def d(self, X: VectorField, Y: VectorField) -> Expr:
        """d omega(X, Y) = X<omega,Y> - Y<omega,X> - <omega,[X,Y]>."""
        return X.apply(self.pair(Y)) - Y.apply(self.pair(X)) - self.pair(lie_bracket(X, Y))

    def d_direct(self, X: VectorField, Y: VectorField) -> Expr:
        """d omega(X, Y) from the component form; agrees with :meth:`d`."""
        return _dot(self.d_components(), _cross(X.components, Y.components))

    def evaluate(self, points) -> np.ndarray:
        vals = compile_exprs(self.components, 3)(np.asarray(points, dtype=float))
        return np.moveaxis(vals, 0, -1)


@dataclass(frozen=True)
class ReebField:
    e: VectorField
    u_h: FiberPoly
    form: ContactForm

    def evaluate(self, points) -> np.ndarray:
        return self.e.evaluate(points)

    def solve_numeric(self, points) -> np.ndarray:
        """Solve omega(e) = 1, d omega(e, f1) = d omega(e, f2) = 0 pointwise (independent check)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        shape = pts.shape[:-1]
        pts = pts.reshape(-1, 3)
        w = self.form.evaluate(pts)
        k = np.moveaxis(compile_exprs(self.form.d_components(), 3)(pts), 0, -1)
        f1 = self.form.frame.f1.evaluate(pts)
        f2 = self.form.frame.f2.evaluate(pts)
        # d omega(e, f) = k . (e x f) = e . (f x k)
        M = np.stack([w, np.cross(f1, k), np.cross(f2, k)], axis=1)
        rhs = np.zeros((pts.shape[0], 3))
        rhs[:, 0] = 1.0
        out = np.empty_like(rhs)
        for i in range(pts.shape[0]):
            try:
                if np.linalg.cond(M[i]) > 1e12:
                    raise np.linalg.LinAlgError
                out[i] = np.linalg.solve(M[i], rhs[i])
            except np.linalg.LinAlgError:
                raise ReebSolveError(pts[i]) from None
        return out.reshape(shape + (3,))


def _check_contact(frame: Frame2) -> None:
    for q in frame.sample_points(frame.sample):
        try:
            dim = bracket_flag_dim(frame, q, 2)
        except RankAmbiguityError:
            dim = -1
        if dim != 3:
            raise ContactConditionError("contact condition n2 = 3 fails", q)


def normalized_contact_form(frame: Frame2, A: MetricCoeffs, check: bool = True) -> ContactForm:
    """omega = -sigma / (sqrt(delta) D) * (f1 x f2), D = det(f1, f2, [f1, f2]).

    With this choice omega(f1) = omega(f2) = 0 and d omega(f1, f2) = sigma / sqrt(delta),
    the metric area of (f1, f2) with the frame's orientation sign sigma.
    """
    if check:
        _check_contact(frame)
        A.check_positive_definite(frame.sample_points(frame.sample))
    f1, f2 = frame.f1.components, frame.f2.components
    f3 = frame.bracket().components
    n = _cross(f1, f2)
    D = _dot(n, f3)
    rho = call("sqrt", A.delta)
    s = as_expr(-frame.orientation) / (rho * D)
    return ContactForm(tuple(s * c for c in n), frame, A, rho)


def reeb_field(frame: Frame2, A: MetricCoeffs, check: bool = True) -> ReebField:
    """The Reeb field e = k / <omega, k> where k spans ker d omega."""
    form = normalized_contact_form(frame, A, check=check)
    k = form.d_components()
    denom = _dot(form.components, k)
    e = VectorField(tuple(c / denom for c in k))
    return ReebField(e, hamiltonian_lift(e), form)


def _vanishes(F: FiberPoly, frame: Frame2, tol: float = 1e-12) -> bool:
    if F.is_zero():
        return True
    rng = np.random.default_rng(0)
    pts = frame.sample_points(frame.sample)
    p = rng.normal(size=pts.shape)
    return bool(np.max(np.abs(F.evaluate(pts, p))) <= tol)


def heisenberg_relations_hold(frame: Frame2) -> bool:
    """{v1, {v1, v2}} = {v2, {v2, v1}} = 0 (exactly, or numerically on the sample grid)."""
    v1, v2 = frame_lifts(frame)
    v12 = poisson_bracket(v1, v2)
    return _vanishes(
        poisson_bracket(v1, v12), frame
    ) and _vanishes(poisson_bracket(v2, poisson_bracket(v2, v1)), frame)


def reeb_lift_formula(frame: Frame2, A: MetricCoeffs, literal: bool = False) -> FiberPoly:
    """Closed-form Reeb lift for frames with Heisenberg relations.

    ``-u_h = b {v1, v2} + v1 {v2, b} + v2 {b, v1}`` with ``b = sqrt(delta)``.
    ``literal=True`` uses ``b = delta`` instead; the two coincide when
    ``delta`` is identically 1 but only the square root reproduces the
    geometric Reeb field in general (e.g. ``A = c I`` gives ``-u_h = c {v1, v2}``).
    """
    if not heisenberg_relations_hold(frame):
        raise HeisenbergRelationError("frame does not satisfy {v1,{v1,v2}} = {v2,{v2,v1}} = 0")
    v1, v2 = frame_lifts(frame)
    b = A.delta if literal else call("sqrt", A.delta)
    B = FiberPoly.function(b, 3)
    minus_u = b * poisson_bracket(v1, v2) + v1 * poisson_bracket(v2, B) + v2 * poisson_bracket(B, v1)
    if frame.orientation < 0:
        minus_u = -minus_u
    return -minus_u

