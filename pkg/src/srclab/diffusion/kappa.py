"""Gaussian curvature of the quotient surface of a Reeb-invariant metric."""

from __future__ import annotations

import numpy as np

from .dynamics import invariance_residual
from .model import GridModel, as_model

__all__ = ["KappaPreconditionError", "quotient_metric", "kappa_estimate"]


class KappaPreconditionError(ValueError):
    def __init__(self, residual: float, tol: float):
        self.residual = residual
        super().__init__(f"metric is not Reeb invariant: residual {residual:.3g} > {tol:.3g}")


def quotient_metric(model, q, s) -> np.ndarray:
    """First fundamental form (E, F, G) of the quotient metric on the disc q + s1 f1(q) + s2 f2(q).

    Tangent vectors of the disc are split along (f1, f2, e); the metric is the
    sub-Riemannian length of the distribution part, which is independent of the
    transversal for Reeb-invariant metrics.  ``s`` has shape (M, 2).
    """
    model = as_model(model)
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    F0, _ = model.jet(q[None])
    d1, d2 = F0[0, :, 0], F0[0, :, 1]
    pts = q + s[:, :1] * d1 + s[:, 1:2] * d2
    F, _ = model.jet(pts)
    e, _ = model.reeb_jet(pts)
    basis = np.stack([F[:, :, 0], F[:, :, 1], e], axis=-1)
    coef = np.linalg.solve(basis, np.stack([np.broadcast_to(d1, pts.shape), np.broadcast_to(d2, pts.shape)], -1))
    alpha = coef[:, :2, :]  # (M, 2, 2) distribution components of the two tangent vectors
    G = np.linalg.inv(model.coeffs(pts))  # metric on the distribution = A^{-1}
    g = np.swapaxes(alpha, 1, 2) @ G @ alpha
    return np.stack([g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]], -1)


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _brioschi(E, F, G, h):
    """Gauss curvature at the centre of 5x5 stencils of E, F, G (indices [u, v])."""
    c = 2

    def du(X):
        return _D1 @ X[:, c] / h

    def dv(X):
        return _D1 @ X[c, :] / h

    def duu(X):
        return _D2 @ X[:, c] / h**2

    def dvv(X):
        return _D2 @ X[c, :] / h**2

    def duv(X):
        return _D1 @ X @ _D1 / h**2

    e, f, g = E[c, c], F[c, c], G[c, c]
    Eu, Ev, Fu, Fv, Gu, Gv = du(E), dv(E), du(F), dv(F), du(G), dv(G)
    M1 = np.array([
        [-0.5 * dvv(E) + duv(F) - 0.5 * duu(G), 0.5 * Eu, Fu - 0.5 * Ev],
        [Fv - 0.5 * Gu, e, f],
        [0.5 * Gv, f, g],
    ])
    M2 = np.array([[0.0, 0.5 * Ev, 0.5 * Gu], [0.5 * Ev, e, f], [0.5 * Gu, f, g]])
    return (np.linalg.det(M1) - np.linalg.det(M2)) / (e * g - f * f) ** 2


def kappa_estimate(model, q, *, h: float = 0.02, residual_tol: float = 1e-6, check: bool = True) -> float:
    """Gaussian curvature at ``q`` of the surface obtained by quotienting out the Reeb orbits.

    Refuses (``KappaPreconditionError``) when the invariance residual exceeds
    ``residual_tol``.  Derivatives use 4th-order central differences with step
    ``h`` on a 5x5 stencil of the transversal disc.
    """
    model = as_model(model)
    if check:
        res = invariance_residual(model)
        if not isinstance(model, GridModel):
            res = max(res, invariance_residual(model, points=np.atleast_2d(np.asarray(q, dtype=float))))
        if res > residual_tol:
            raise KappaPreconditionError(res, residual_tol)
    k = np.arange(-2, 3) * h
    U, V = np.meshgrid(k, k, indexing="ij")
    efg = quotient_metric(model, q, np.column_stack([U.ravel(), V.ravel()])).reshape(5, 5, 3)
    return float(_brioschi(efg[..., 0], efg[..., 1], efg[..., 2], h))
