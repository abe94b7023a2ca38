"""Cotangent lift of a vector-field flow, realized through the variational equations.

For the flow ``P_t`` of a field ``X`` the cotangent lift sends a covector
``xi`` at ``q`` to ``xi o (dP_t)^{-1}`` at ``P_t q``, i.e. the linear map
``M(t) = J(t)^{-T}`` where ``J' = DX(P_t q) J``, ``J(0) = I``.  This is the
Hamiltonian flow of the lift ``v_X``; composing a Hamiltonian with it gives
``(h o U^t)(xi) = h(P_t q, M(t) xi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..expr import Frame2, VectorField, compile_exprs
from ..hamiltonian import MetricCoeffs, reeb_field
from .hamflow import DomainExitError, NonFiniteStateError

__all__ = ["CotangentTransport", "flow_transport", "reeb_transport"]


@dataclass(frozen=True)
class CotangentTransport:
    times: np.ndarray
    base: np.ndarray  # (N, 3) points P_t q
    matrices: np.ndarray  # (N, 3, 3) covector maps M(t)
    jacobians: np.ndarray  # (N, 3, 3) dP_t

    @property
    def final(self) -> np.ndarray:
        return self.matrices[-1]

    def apply(self, xi, index: int = -1) -> np.ndarray:
        return self.matrices[index] @ np.asarray(xi, dtype=float)

    def pullback(self, Q, index: int = -1) -> np.ndarray:
        """Quadratic form M^T Q M at q, given the form ``Q`` on covectors at P_t q."""
        M = self.matrices[index]
        return M.T @ np.asarray(Q, dtype=float) @ M


def _compiled_flow(field: VectorField):
    n = field.dim
    jac = field.jacobian()
    exprs = tuple(field.components) + tuple(c for row in jac for c in row)
    return compile_exprs(exprs, n)


def flow_transport(field: VectorField, q, t: float, step: float, domain=None) -> CotangentTransport:
    """Integrate ``x' = X(x)``, ``J' = DX(x) J`` with fixed-step RK4 and record ``M = J^{-T}``."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = field.dim
    fn = _compiled_flow(field)
    x0 = np.asarray(q, dtype=float)
    n_steps = int(math.ceil(abs(t) / step - 1e-12)) if t != 0 else 0
    times = np.linspace(0.0, t, n_steps + 1)
    dt = t / n_steps if n_steps else 0.0
    lo = hi = None
    if domain is not None:
        lo = np.array([a for a, _ in domain])
        hi = np.array([b for _, b in domain])

    def rhs(y):
        v = fn.scalar(y[:n].tolist())
        X = np.array(v[:n])
        DX = np.array(v[n:]).reshape(n, n)
        return np.concatenate([X, (DX @ y[n:].reshape(n, n)).ravel()])

    y = np.concatenate([x0, np.eye(n).ravel()])
    ys = [y]
    for i in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(times[i + 1])
        if lo is not None and (np.any(y[:n] < lo) or np.any(y[:n] > hi)):
            raise DomainExitError(times[i + 1], y[:n])
        ys.append(y)
    ys = np.array(ys)
    J = ys[:, n:].reshape(-1, n, n)
    M = np.linalg.inv(J).transpose(0, 2, 1)
    return CotangentTransport(times, ys[:, :n], M, J)


def reeb_transport(frame: Frame2, A: MetricCoeffs, q, t: float, step: float = 1e-3,
                   domain=None) -> CotangentTransport:
    """Cotangent lift of the Reeb flow of (frame, A) from ``q`` over time ``t``."""
    e = reeb_field(frame, A, check=False).e
    return flow_transport(e, q, t, step, domain)
