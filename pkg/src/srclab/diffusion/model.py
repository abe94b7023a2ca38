"""Pointwise Reeb data of a metric in frame coordinates.

For a frame (f1, f2) with f3 = [f1, f2] and a metric with dual coefficients
A, the Reeb lift acts on frame momenta v_i by ``{u_h, v_i} = sum_k C_ki v_k``
where ``[e, f_i] = sum_k C_ki f_k``.  Hence on a quadratic form ``v^T M v``

    {u_h, v^T M v} = v^T L[M] v,   L[M] = e(M) + C M + M C^T,

and along the Reeb orbit the frame momenta transport as ``B' = B C`` so that
``h o U^t = v^T B A(P_t q) B^T v``.

Two models provide these data: an exact symbolic one (any contact frame,
Reeb field from the normalized contact form) and one interpolated from a
:class:`GridMetricField` (frames with Heisenberg relations, where
``e = -sigma (b f3 + f2(b) f1 - f1(b) f2)`` with ``b = sqrt(det A)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..expr import Frame2, VectorField, compile_exprs, differentiate
from ..hamiltonian import HeisenbergRelationError, MetricCoeffs, Structure, heisenberg_relations_hold, reeb_field
from .grid import GridMetricField

__all__ = ["FrameJet", "LocalData", "SymbolicModel", "GridModel", "as_model"]


def _field_jet(fields) -> "callable":
    exprs = []
    for f in fields:
        exprs.extend(f.components)
        exprs.extend(c for row in f.jacobian() for c in row)
    fn = compile_exprs(exprs, 3)
    k = len(fields)

    def ev(points):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        v = compile_eval(fn, pts).reshape(k, 12, -1)
        vals = np.moveaxis(v[:, :3], -1, 0)  # (M, k, 3)
        jac = np.moveaxis(v[:, 3:], -1, 0).reshape(-1, k, 3, 3)  # (M, k, i, j) = d_j f^i
        return vals, jac

    return ev


def compile_eval(fn, pts) -> np.ndarray:
    out = fn(pts)
    return np.broadcast_to(out, out.shape[:1] + (pts.shape[0],)) if out.ndim == 1 else out


class FrameJet:
    """Values and Jacobians of f1, f2, f3 = [f1, f2] at a batch of points."""

    def __init__(self, frame: Frame2):
        self.frame = frame
        self._ev = _field_jet((frame.f1, frame.f2, frame.bracket()))

    def __call__(self, points):
        """Return ``F`` (M, 3, 3) with columns f1, f2, f3 and ``DF`` (M, 3, i, j)."""
        vals, jac = self._ev(points)
        return np.transpose(vals, (0, 2, 1)), jac


@dataclass
class LocalData:
    points: np.ndarray  # (M, 3)
    A: np.ndarray  # (M, 2, 2)
    e: np.ndarray  # (M, 3) velocity of the transporting flow
    C: np.ndarray  # (M, 2, 2) structure functions, [e, f_i] = sum_k C_ki f_k
    leak: np.ndarray  # (M, 2) f3-components of [e, f_i]; zero for flows preserving the distribution


def structure_functions(F, DF, e, De):
    """Coefficients of [e, f_i] = Df_i e - De f_i in the basis (f1, f2, f3)."""
    br = np.einsum("maij,mj->mia", DF[:, :2], e) - np.einsum("mij,mja->mia", De, F[:, :, :2])
    coef = np.linalg.solve(F, br)  # (M, 3, 2)
    return coef[:, :2, :], coef[:, 2, :]


def lie_operator(M, dM_e, C):
    """L[M] = e(M) + C M + M C^T for stacks of 2x2 forms."""
    return dM_e + C @ M + M @ np.swapaxes(C, -1, -2)


def _sym(a):
    return np.stack([np.stack([a[..., 0], a[..., 1]], -1), np.stack([a[..., 1], a[..., 2]], -1)], -2)


def _sym_grad(g):
    """(M, comp, k) gradients of (a11, a12, a22) -> (M, 2, 2, k)."""
    return np.stack([np.stack([g[:, 0], g[:, 1]], 1), np.stack([g[:, 1], g[:, 2]], 1)], 1)


def _flow_jet(flow: VectorField):
    ev = _field_jet((flow,))

    def f(points):
        v, j = ev(points)
        return v[:, 0], j[:, 0]

    return f


class SymbolicModel:
    """Exact Reeb data of a symbolic metric on any contact frame."""

    def __init__(self, frame: Frame2, metric: MetricCoeffs, check: bool = True):
        self.frame = frame
        self.metric = metric
        self.jet = FrameJet(frame)
        self.reeb = reeb_field(frame, metric, check=check)
        self._e = _flow_jet(self.reeb.e)
        self._A = compile_exprs(metric.components, 3)
        self._dA = compile_exprs([differentiate(c, k + 1) for c in metric.components for k in range(3)], 3)

    def inside(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for k, (lo, hi) in enumerate(self.frame.domain):
            ok &= (pts[..., k] >= lo - 1e-12) & (pts[..., k] <= hi + 1e-12)
        return ok

    def coeffs(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return _sym(np.moveaxis(compile_eval(self._A, pts), 0, -1))

    def coeff_gradient(self, points) -> np.ndarray:
        """(M, 2, 2, 3) coordinate gradient of A."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        g = np.moveaxis(compile_eval(self._dA, pts), 0, -1).reshape(-1, 3, 3)  # (M, comp, k)
        return _sym_grad(g)

    def reeb_jet(self, points):
        return self._e(points)

    def local(self, points, flow=None) -> LocalData:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        F, DF = self.jet(pts)
        e, De = (self.reeb_jet(pts) if flow is None else _flow_jet(flow)(pts))
        C, leak = structure_functions(F, DF, e, De)
        return LocalData(pts, self.coeffs(pts), e, C, leak)


class GridModel:
    """Reeb data interpolated from a gridded metric on a frame with Heisenberg relations."""

    def __init__(self, field: GridMetricField, check: bool = True):
        if check and not heisenberg_relations_hold(field.frame):
            raise HeisenbergRelationError("grid dynamics need a frame with Heisenberg relations")
        self.field = field
        self.frame = field.frame
        self.sigma = float(field.frame.orientation)
        self.jet = FrameJet(field.frame)
        a = field.values
        b = np.sqrt(field.delta)
        db = field.grad(b)
        Hb = field.hessian(b)
        gA = field.grad(a)  # (..., 3 comps, 3)
        # packed channels: a (3) | b (1) | db (3) | Hb (9) | grad a (9)
        self._packed = np.concatenate(
            [a, b[..., None], db, Hb.reshape(b.shape + (9,)), gA.reshape(b.shape + (9,))], axis=-1
        )

    def inside(self, points) -> np.ndarray:
        return self.field.inside(points)

    def _channels(self, points=None):
        if points is None:
            P = self._packed.reshape(-1, self._packed.shape[-1])
            pts = self.field.points.reshape(-1, 3)
        else:
            pts = np.asarray(points, dtype=float).reshape(-1, 3)
            P = self.field.interpolate(self._packed, pts)
        return pts, P

    @staticmethod
    def _unpack(P):
        a = P[:, 0:3]
        b = P[:, 3]
        db = P[:, 4:7]
        Hb = P[:, 7:16].reshape(-1, 3, 3)
        gA = P[:, 16:25].reshape(-1, 3, 3)
        return a, b, db, Hb, gA

    def _reeb(self, F, DF, b, db, Hb):
        f1, f2, f3 = F[:, :, 0], F[:, :, 1], F[:, :, 2]
        D1, D2, D3 = DF[:, 0], DF[:, 1], DF[:, 2]
        s1 = np.einsum("mi,mi->m", f1, db)  # f1(b)
        s2 = np.einsum("mi,mi->m", f2, db)  # f2(b)
        e = -self.sigma * (b[:, None] * f3 + s2[:, None] * f1 - s1[:, None] * f2)
        g1 = np.einsum("mij,mi->mj", D1, db) + np.einsum("mij,mj->mi", Hb, f1)  # grad f1(b)
        g2 = np.einsum("mij,mi->mj", D2, db) + np.einsum("mij,mj->mi", Hb, f2)
        De = -self.sigma * (
            np.einsum("mi,mj->mij", f3, db) + b[:, None, None] * D3
            + np.einsum("mi,mj->mij", f1, g2) + s2[:, None, None] * D1
            - np.einsum("mi,mj->mij", f2, g1) - s1[:, None, None] * D2
        )
        return e, De

    def reeb_jet(self, points=None):
        pts, P = self._channels(points)
        _, b, db, Hb, _ = self._unpack(P)
        F, DF = self.jet(pts)
        return self._reeb(F, DF, b, db, Hb)

    def coeffs(self, points=None) -> np.ndarray:
        _, P = self._channels(points)
        return _sym(P[:, 0:3])

    def coeff_gradient(self, points=None) -> np.ndarray:
        _, P = self._channels(points)
        return _sym_grad(P[:, 16:25].reshape(-1, 3, 3))

    def local(self, points=None, flow=None) -> LocalData:
        pts, P = self._channels(points)
        a, b, db, Hb, _ = self._unpack(P)
        F, DF = self.jet(pts)
        if flow is None:
            e, De = self._reeb(F, DF, b, db, Hb)
        else:
            e, De = _flow_jet(flow)(pts)
        C, leak = structure_functions(F, DF, e, De)
        return LocalData(pts, _sym(a), e, C, leak)


def as_model(obj, metric: MetricCoeffs | None = None):
    """Accept a model, a grid field, a catalog structure, or a (frame, metric) pair."""
    if isinstance(obj, (SymbolicModel, GridModel)):
        return obj
    if isinstance(obj, GridMetricField):
        return GridModel(obj)
    if isinstance(obj, Structure):
        return SymbolicModel(obj.frame, obj.metric)
    if isinstance(obj, Frame2):
        if metric is None:
            raise TypeError("a frame needs a metric")
        return SymbolicModel(obj, metric)
    raise TypeError(f"cannot build a metric model from {type(obj).__name__}")
