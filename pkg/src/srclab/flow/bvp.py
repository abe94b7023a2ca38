"""Multi-start shooting for sub-Riemannian geodesics between two points.

Geodesics are integrated for ``H = h/2`` with initial covectors normalized to
``h(q0, p0) = 1``, so they are parameterized by arclength and the duration
``T`` is the length.  Unknowns per restart are ``(theta, s, log T)``, where

    p0 = cos(theta) u1 / sqrt(l1) + sin(theta) u2 / sqrt(l2) + s u3

with ``h(q0, .) = sum l_i <., u_i>^2`` the eigen-decomposition of the fibre
form at ``q0`` (``u3`` spans its kernel).  Every restart shoots with the same
number of RK4 steps, so the discrete endpoint map is smooth in the unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hamiltonian import FiberPoly
from ..lm import levenberg_marquardt
from .hamflow import HamiltonianVectorField

__all__ = ["BvpSolution", "BvpSolutionList", "GeodesicShooter", "solve_geodesic_bvp"]


@dataclass(frozen=True)
class BvpSolution:
    p0: np.ndarray
    T: float
    terminal_error: float
    length: float
    converged: bool
    restart: int
    params: tuple = ()


class BvpSolutionList(list):
    """Distinct converged solutions sorted by length, with summary statistics."""

    def __init__(self, items=(), *, restarts: int = 0, converged_restarts: int = 0,
                 length_tol: float = 1e-5):
        super().__init__(items)
        self.restarts = restarts
        self.converged_restarts = converged_restarts
        self.length_tol = length_tol

    @property
    def distance(self) -> float:
        return min((s.length for s in self), default=float("nan"))

    @property
    def minimal(self) -> list:
        d = self.distance
        return [s for s in self if s.length <= d + self.length_tol]

    @property
    def multiplicity(self) -> int:
        return len(self.minimal)


class GeodesicShooter:
    """Batched endpoint map of the arclength-parameterized geodesic flow from ``q0``."""

    def __init__(self, h: FiberPoly, q0, n_steps: int = 200):
        self.h = h
        self.q0 = np.asarray(q0, dtype=float)
        self.n_steps = int(n_steps)
        self.field = HamiltonianVectorField(h, 0.5)
        Q = h.fiber_matrix(self.q0)
        lam, U = np.linalg.eigh(Q)
        order = np.argsort(lam)[::-1]
        lam, U = lam[order], U[:, order]
        for j in range(U.shape[1]):
            k = np.argmax(np.abs(U[:, j]))
            if U[k, j] < 0:
                U[:, j] = -U[:, j]
        if lam[1] <= 1e-12 * max(lam[0], 1e-300):
            raise ValueError("fibre form at q0 must have rank 2")
        self.lam, self.U = lam, U

    def covector(self, theta, s) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        s = np.asarray(s, dtype=float)
        u1, u2, u3 = self.U.T
        return (np.cos(theta)[..., None] * u1 / np.sqrt(self.lam[0])
                + np.sin(theta)[..., None] * u2 / np.sqrt(self.lam[1])
                + s[..., None] * u3)

    def shoot(self, p0, T, record: int = 0):
        """Endpoints (and optionally ``record + 1`` equispaced samples) for a batch."""
        p0 = np.atleast_2d(np.asarray(p0, dtype=float))
        B = p0.shape[0]
        T = np.broadcast_to(np.asarray(T, dtype=float), (B,))
        y = np.empty((6, B))
        y[:3] = self.q0[:, None]
        y[3:] = p0.T
        dt = T / self.n_steps
        half = 0.5 * dt
        sixth = dt / 6.0
        rhs = self.field.rows_rhs
        keep = set(np.linspace(0, self.n_steps, record + 1).round().astype(int)) if record else set()
        samples = [y.T.copy()] if record else None
        with np.errstate(all="ignore"):
            for i in range(self.n_steps):
                k1 = rhs(y)
                k2 = rhs(y + half * k1)
                k3 = rhs(y + half * k2)
                k4 = rhs(y + dt * k3)
                y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
                if record and (i + 1) in keep:
                    samples.append(y.T.copy())
        return (y.T, np.stack(samples, axis=1)) if record else y.T


def _params_to_state(shooter: GeodesicShooter, z, t_max):
    theta, s, tau = z[:, 0], z[:, 1], z[:, 2]
    with np.errstate(all="ignore"):
        T = np.exp(tau)
    T = np.where(T <= t_max, T, np.nan)
    return shooter.covector(theta, s), T


def solve_geodesic_bvp(
    h: FiberPoly,
    q0,
    q1,
    restarts: int = 64,
    seed: int = 0,
    *,
    n_steps: int = 200,
    t_max: float | None = None,
    tol: float = 1e-7,
    dedup: float = 1e-4,
    length_tol: float = 1e-5,
    max_iter: int = 60,
    s_scale: float | None = None,
    t_range: tuple[float, float] = (1.0, 4.0),
) -> BvpSolutionList:
    """All distinct converged shooting solutions from ``q0`` to ``q1``.

    Restarts sample ``theta`` uniformly, ``s`` from a heavy-tailed law scaled by
    ``s_scale`` (default ``1 / |q1 - q0|^2``) and ``T`` log-uniformly from
    ``t_range`` times ``d = |q1 - q0|``; odd restarts are antithetic partners ``(theta + pi, -s)``.
    Two solutions are identified when their sampled paths agree within ``dedup``.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(np.linalg.norm(q1 - q0))
    if d < 1e-14:
        sol = BvpSolution(np.zeros_like(q0), 0.0, 0.0, 0.0, True, 0)
        return BvpSolutionList([sol], restarts=0, converged_restarts=1, length_tol=length_tol)
    t_max = 3.0 * max(2.0, 4 * d) if t_max is None else float(t_max)
    shooter = GeodesicShooter(h, q0, n_steps)
    s_scale = 1.0 / d**2 if s_scale is None else float(s_scale)

    rng = np.random.default_rng(seed)
    half = (restarts + 1) // 2
    theta = rng.uniform(0.0, 2 * np.pi, half)
    s = np.sinh(1.5 * rng.standard_normal(half)) * s_scale * 0.5
    T0 = d * np.exp(rng.uniform(np.log(t_range[0]), np.log(t_range[1]), half))
    z0 = np.empty((2 * half, 3))
    z0[0::2] = np.column_stack([theta, s, np.log(T0)])
    z0[1::2] = np.column_stack([theta + np.pi, -s, np.log(T0)])
    z0 = z0[:restarts]

    def residual(z):
        p0, T = _params_to_state(shooter, z, t_max)
        return shooter.shoot(p0, T)[:, :3] - q1

    res = levenberg_marquardt(residual, z0, target=1e-12, max_iter=max_iter, stall=6, stall_ratio=0.9)

    ok = np.flatnonzero(res.norm < tol)
    if ok.size == 0:
        return BvpSolutionList([], restarts=restarts, converged_restarts=0, length_tol=length_tol)
    z = res.x[ok]
    p0, T = _params_to_state(shooter, z, t_max)
    _, paths = shooter.shoot(p0, T, record=32)
    paths = paths[..., :3]

    # restart order first, then keep the first representative of each path class
    kept: list[int] = []
    for i in range(ok.size):
        if any(np.max(np.abs(paths[i] - paths[j])) < dedup and abs(T[i] - T[j]) < dedup for j in kept):
            continue
        kept.append(i)
    sols = [
        BvpSolution(p0[i].copy(), float(T[i]), float(res.norm[ok[i]]), float(T[i]), True, int(ok[i]),
                    tuple(float(v) for v in z[i]))
        for i in kept
    ]
    sols.sort(key=lambda s_: (s_.length, s_.restart))
    return BvpSolutionList(sols, restarts=restarts, converged_restarts=int(ok.size), length_tol=length_tol)
