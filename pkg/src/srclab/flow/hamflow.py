"""Hamiltonian vector fields of fibre-polynomial Hamiltonians and fixed-step integration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from ..expr import ONE, ZERO, EvaluationError, as_expr, compile_exprs, differentiate, var
from ..hamiltonian import FiberPoly

__all__ = [
    "HamiltonianVectorField",
    "Trajectory",
    "NonFiniteStateError",
    "DomainExitError",
    "integrate_hamiltonian",
    "rk4_fixed",
]


class NonFiniteStateError(ArithmeticError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"state became non-finite at t = {t:.6g}")


class DomainExitError(ArithmeticError):
    def __init__(self, t: float, point):
        self.t = t
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"path left the declared domain at t = {t:.6g}, q = {self.point.tolist()}")


class HamiltonianVectorField:
    """x' = dH/dp, p' = -dH/dx with exact symbolic partials, vectorised over a batch.

    ``scale`` multiplies the Hamiltonian (``scale=0.5`` integrates h/2).
    """

    def __init__(self, H: FiberPoly, scale: float = 1.0):
        self.H = H
        self.n = n = H.n
        self.scale = float(scale)
        sc = as_expr(self.scale)
        pvars = [var(n + k) for k in range(1, n + 1)]

        def mono(m):
            out = ONE
            for v, e in zip(pvars, m):
                out = out * v**e
            return out

        dx = [ZERO] * n
        dp = [ZERO] * n
        energy = ZERO
        for m, c in H.terms.items():
            pm = mono(m)
            energy = energy + c * pm
            for k in range(n):
                if m[k] > 0:
                    r = m[:k] + (m[k] - 1,) + m[k + 1 :]
                    dx[k] = dx[k] + m[k] * c * mono(r)
                dp[k] = dp[k] - differentiate(c, k + 1) * pm
        exprs = tuple(sc * e for e in dx + dp) + (sc * energy,)
        self._eval = compile_exprs(exprs, 2 * n)

    def _batch(self, x, p, strict):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(x.shape, p.shape)
        y = np.concatenate([np.broadcast_to(x, shape), np.broadcast_to(p, shape)], axis=-1)
        return self._eval(y, strict=strict)

    def __call__(self, x, p, strict: bool = True):
        """Return (dx/dt, dp/dt) for states of shape (..., n)."""
        v = self._batch(x, p, strict)
        n = self.n
        return np.moveaxis(v[:n], 0, -1), np.moveaxis(v[n : 2 * n], 0, -1)

    def energy(self, x, p, strict: bool = True):
        return self._batch(x, p, strict)[2 * self.n]

    def rows_rhs(self, y, out=None):
        """Right-hand side for states laid out as ``(2n, B)``; non-finite values propagate."""
        vals = self._eval.rows(y)
        out = np.empty_like(y) if out is None else out
        for k in range(2 * self.n):
            out[k] = vals[k]
        return out

    def state_rhs(self, y, strict: bool = True):
        """Right-hand side on stacked states ``y = (x, p)`` of shape (..., 2n)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return np.array(self._eval.scalar(y.tolist())[: 2 * self.n])
        return np.moveaxis(self._eval(y, strict=strict)[: 2 * self.n], 0, -1)


def rk4_fixed(rhs, y0, dt, n_steps: int, record: bool = False):
    """Classical RK4 on an array state; ``dt`` may be an array broadcasting against y0[..., :1]."""
    y = np.asarray(y0, dtype=float)
    hist = [y] if record else None
    for _ in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if record:
            hist.append(y)
    return (y, np.stack(hist)) if record else y


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    step: float
    method: str = "rk4"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ValueError("times and states do not match")
        if self.times.size > 1:
            d = np.diff(self.times)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError("sample times must be strictly monotone")

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def q(self) -> np.ndarray:
        return self.states[:, : self.n]

    @property
    def p(self) -> np.ndarray:
        return self.states[:, self.n :]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    @property
    def relative_energy_drift(self) -> float:
        return self.energy_drift / max(abs(float(self.energy[0])), 1e-300)

    def to_csv(self, path) -> None:
        n = self.n
        header = ["t"] + [f"x{k}" for k in range(1, n + 1)] + [f"p{k}" for k in range(1, n + 1)] + ["H"]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, s, e in zip(self.times, self.states, self.energy):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in s] + [f"{e:.17g}"])


def _check_state(y, t, domain):
    if not np.all(np.isfinite(y)):
        raise NonFiniteStateError(t)
    if domain is not None:
        n = len(domain)
        q = y[:n]
        lo = np.array([a for a, _ in domain])
        hi = np.array([b for _, b in domain])
        if np.any(q < lo) or np.any(q > hi):
            raise DomainExitError(t, q)


def integrate_hamiltonian(
    H: FiberPoly,
    xi0,
    T: float,
    step: float,
    *,
    adaptive: bool = False,
    domain=None,
    scale: float = 1.0,
    rtol: float = 1e-12,
) -> Trajectory:
    """Integrate x' = dH/dp, p' = -dH/dx from ``xi0 = (x, p)`` over duration ``T``.

    The default is fixed-step classical RK4 with ``ceil(|T| / step)`` equal steps.
    ``adaptive=True`` uses DOP853 with tolerance ``rtol`` and records the same
    uniform output grid.  Evaluation failures raise :class:`EvaluationError`;
    non-finite states raise :class:`NonFiniteStateError`.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0, p0 = (np.asarray(v, dtype=float) for v in xi0)
    if x0.shape != (H.n,) or p0.shape != (H.n,):
        raise ValueError(f"initial state must be two vectors of length {H.n}")
    field_ = HamiltonianVectorField(H, scale)
    y0 = np.concatenate([x0, p0])
    _check_state(y0, 0.0, domain)
    n_steps = int(math.ceil(abs(T) / step - 1e-12)) if T != 0 else 0
    if n_steps == 0:
        return Trajectory(np.array([0.0]), y0[None, :], np.atleast_1d(field_.energy(x0, p0)), step)
    dt = T / n_steps
    times = np.linspace(0.0, T, n_steps + 1)
    if adaptive:
        sol = solve_ivp(lambda t, y: field_.state_rhs(y), (0.0, T), y0, method="DOP853",
                        t_eval=times, rtol=rtol, atol=rtol)
        if not sol.success:
            raise NonFiniteStateError(float(sol.t[-1]))
        states = sol.y.T
        method = "dop853"
    else:
        states = np.empty((n_steps + 1, y0.size))
        states[0] = y0
        y = y0
        for i in range(n_steps):
            y = rk4_fixed(field_.state_rhs, y, dt, 1)
            _check_state(y, times[i + 1], domain)
            states[i + 1] = y
        method = "rk4"
    for i in range(states.shape[0]):
        _check_state(states[i], times[i], domain)
    energy = field_.energy(states[:, : H.n], states[:, H.n :])
    return Trajectory(times, states, np.asarray(energy, dtype=float), abs(dt), method)

