"""Frenet control system, frame length and closure search for perturbed multiple circles.

The frame E = (e_1 .. e_n) (columns) obeys E' = E Omega(t) with Omega skew
tridiagonal, Omega[i+1, i] = u_i = -Omega[i, i+1], and gamma' = e_1.  The
metric on the rotation group is |Omega|^2 = sum u_i^2, so the once-run unit
circle has frame length 2 pi.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from ..lm import levenberg_marquardt

__all__ = [
    "FrenetControls",
    "FrameState",
    "FrenetTrajectory",
    "ClosureReport",
    "DegenerateCurveError",
    "NonFiniteControlError",
    "integrate_frenet",
    "frame_length",
    "closure_defect",
    "closure_search",
    "milnor_check",
]

MILNOR_BOUND = 4 * np.pi


class NonFiniteControlError(ValueError):
    pass


class DegenerateCurveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrenetControls:
    """Controls u_1 .. u_{n-1} as truncated Fourier series with period T = 2 pi m.

    ``coeffs[i] = (c0, a_1, b_1, .., a_K, b_K)`` gives
    ``u_{i+1}(t) = c0 + sum_k a_k cos(k t / m) + b_k sin(k t / m)``.
    """

    n: int
    m: int
    coeffs: np.ndarray  # (n - 1, 2K + 1)
    floor: float = 1e-3
    strict: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[None]
        if self.n < 2 or self.m < 1:
            raise ValueError("need n >= 2 and m >= 1")
        if c.shape[0] != self.n - 1 or c.shape[1] % 2 != 1:
            raise ValueError(f"coeffs must have shape ({self.n - 1}, 2K + 1), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, values, m: int = 1, modes: int = 0, **kw) -> FrenetControls:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        c = np.zeros((v.size, 2 * modes + 1))
        c[:, 0] = v
        return cls(v.size + 1, m, c, **kw)

    @property
    def modes(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def T(self) -> float:
        return 2 * np.pi * self.m

    def __call__(self, t) -> np.ndarray:
        """Control values, shape ``t.shape + (n - 1,)``."""
        t = np.asarray(t, dtype=float)
        k = np.arange(1, self.modes + 1)
        ph = t[..., None] * k / self.m
        basis = np.concatenate(
            [np.ones(t.shape + (1,)), np.stack([np.cos(ph), np.sin(ph)], -1).reshape(t.shape + (2 * k.size,))], -1
        )
        return basis @ self.coeffs.T

    def sample_count(self) -> int:
        """Uniform points that integrate |u| and its products exactly enough (periodic trapezoid)."""
        return max(256, 32 * (self.modes + 1)) * self.m

    def minima(self, samples: int | None = None) -> np.ndarray:
        t = np.linspace(0.0, self.T, samples or 8 * self.sample_count(), endpoint=False)
        return self(t).min(axis=0)

    def check(self) -> None:
        mins = self.minima()
        if not np.all(np.isfinite(self.coeffs)):
            raise NonFiniteControlError("non-finite control coefficients")
        if self.strict:
            if mins[0] <= 0:
                raise ValueError("u_1 must be positive")
            if self.n > 2 and np.min(mins[1:]) < self.floor:
                raise ValueError(f"u_i >= {self.floor} violated for some i >= 2")

    def to_rows(self) -> list:
        rows = []
        for i, c in enumerate(self.coeffs):
            rows.append((i + 1, 0, c[0], 0.0))
            for k in range(1, self.modes + 1):
                rows.append((i + 1, k, c[2 * k - 1], c[2 * k]))
        return rows

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["control", "mode", "cos", "sin"])
            for i, k, a, b in self.to_rows():
                w.writerow([i, k, f"{a:.17g}", f"{b:.17g}"])

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "floor": self.floor, "strict": self.strict,
                "coeffs": [[float(v) for v in row] for row in self.coeffs]}


@dataclass
class FrameState:
    gamma: np.ndarray  # (n,)
    E: np.ndarray  # (n, n), columns e_1 .. e_n


@dataclass
class FrenetTrajectory:
    t: np.ndarray  # (N + 1,)
    gamma: np.ndarray  # (N + 1, n)
    E: np.ndarray  # (N + 1, n, n)

    def state(self, k: int = -1) -> FrameState:
        return FrameState(self.gamma[k], self.E[k])

    @property
    def orthogonality_drift(self) -> float:
        n = self.E.shape[-1]
        return float(np.max(np.abs(np.swapaxes(self.E, -1, -2) @ self.E - np.eye(n))))

    @property
    def defect(self) -> float:
        return float(np.linalg.norm(self.gamma[-1] - self.gamma[0]) + np.linalg.norm(self.E[-1] - self.E[0]))

    def to_csv(self, path) -> None:
        n = self.gamma.shape[1]
        head = ["t"] + [f"g{i + 1}" for i in range(n)] + [f"E{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for k in range(self.t.size):
                w.writerow([f"{v:.17g}" for v in np.concatenate([[self.t[k]], self.gamma[k], self.E[k].ravel()])])


def _skew(u: np.ndarray, n: int) -> np.ndarray:
    """(..., n-1) controls -> (..., n, n) skew tridiagonal generators."""
    W = np.zeros(u.shape[:-1] + (n, n))
    i = np.arange(n - 1)
    W[..., i + 1, i] = u
    W[..., i, i + 1] = -u
    return W


def _expm_skew(W: np.ndarray) -> np.ndarray:
    n = W.shape[-1]
    if n == 2:
        a = W[..., 1, 0]
        c, s = np.cos(a), np.sin(a)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    if n == 3:
        w = np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], -1)
        th = np.linalg.norm(w, axis=-1)[..., None, None]
        small = th < 1e-8
        ths = np.where(small, 1.0, th)
        A = np.where(small, 1.0 - th**2 / 6.0, np.sin(ths) / ths)
        B = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(ths)) / ths**2)
        return np.eye(3) + A * W + B * (W @ W)
    return expm(W)


_C1, _C2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6


def _magnus_steps(coeffs, n: int, m: int, T: float, steps: int):
    """Frames at ``steps + 1`` uniform times for a batch of coefficient arrays (B, n-1, 2K+1)."""
    B = coeffs.shape[0]
    h = T / steps
    t0 = np.arange(steps) * h
    K = (coeffs.shape[-1] - 1) // 2
    k = np.arange(1, K + 1)

    def u_at(t):
        ph = t[:, None] * k / m
        basis = np.concatenate([np.ones((t.size, 1)), np.stack([np.cos(ph), np.sin(ph)], -1).reshape(t.size, 2 * K)], 1)
        return np.einsum("tj,bij->bti", basis, coeffs)  # (B, steps, n-1)

    u1, u2 = u_at(t0 + _C1 * h), u_at(t0 + _C2 * h)
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise NonFiniteControlError("non-finite control values")
    W1, W2 = _skew(u1, n), _skew(u2, n)
    Om = 0.5 * h * (W1 + W2) + (np.sqrt(3) / 12) * h * h * (W1 @ W2 - W2 @ W1)
    S = _expm_skew(Om)  # (B, steps, n, n)
    E = np.empty((B, steps + 1, n, n))
    E[:, 0] = np.eye(n)
    for j in range(steps):
        E[:, j + 1] = E[:, j] @ S[:, j]
    return E


def _gamma_from_frames(E, T):
    """Composite Simpson for gamma' = e_1 on frames at an even number of uniform steps."""
    steps = E.shape[1] - 1
    h = T / steps
    e1 = E[..., :, 0]  # (B, steps + 1, n)
    inc = (h / 3.0) * (e1[:, 0:-1:2] + 4 * e1[:, 1::2] + e1[:, 2::2])  # per pair of steps
    g = np.zeros(E.shape[:2] + (E.shape[-1],))
    g[:, 2::2] = np.cumsum(inc, axis=1)
    # odd nodes: first half of each pair from the quadratic through the three frames
    half = (h / 12.0) * (5 * e1[:, 0:-1:2] + 8 * e1[:, 1::2] - e1[:, 2::2])
    g[:, 1::2] = g[:, 0:-1:2] + half
    return g


def _default_steps(controls: FrenetControls) -> int:
    return 2 * ((controls.sample_count() + 1) // 2)


def integrate_frenet(controls: FrenetControls, steps: int | None = None, E0=None, gamma0=None) -> FrenetTrajectory:
    """Magnus (order 4) group-exponential stepping of the frame; gamma by Simpson quadrature of e_1."""
    if not np.all(np.isfinite(controls.coeffs)):
        raise NonFiniteControlError("non-finite control coefficients")
    steps = _default_steps(controls) if steps is None else int(steps)
    if steps < 2 or steps % 2:
        raise ValueError("steps must be a positive even number")
    n = controls.n
    E = _magnus_steps(controls.coeffs[None], n, controls.m, controls.T, steps)
    g = _gamma_from_frames(E, controls.T)[0]
    E = E[0]
    if E0 is not None:
        E0 = np.asarray(E0, dtype=float)
        E = E0 @ E
        g = g @ E0.T
    if gamma0 is not None:
        g = g + np.asarray(gamma0, dtype=float)
    return FrenetTrajectory(np.linspace(0.0, controls.T, steps + 1), g, E)


def frame_length(controls: FrenetControls, samples: int | None = None) -> float:
    """Integral of (u_1^2 + .. + u_{n-1}^2)^(1/2) over one period.

    Uses the periodic trapezoid rule, which is the Gauss rule for
    trigonometric polynomials and exact for them up to its degree.
    """
    N = samples or 8 * controls.sample_count()
    t = np.linspace(0.0, controls.T, N, endpoint=False)
    return float(np.sum(np.linalg.norm(controls(t), axis=-1)) * controls.T / N)


def closure_defect(controls: FrenetControls, steps: int | None = None) -> float:
    return integrate_frenet(controls, steps).defect


# -- closure search ---------------------------------------------------------------------


@dataclass
class ClosureReport:
    status: str  # "SUCCESS" or "FAILURE"
    n: int
    m: int
    defect: float
    verified_defect: float
    frame_length: float
    min_u: list
    controls: FrenetControls
    restart: int
    restarts_run: int
    iterations: int
    seed: int
    budget: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "SUCCESS"

    @property
    def milnor_margin(self) -> float:
        return self.frame_length - MILNOR_BOUND

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "n": self.n,
            "m": self.m,
            "defect": self.defect,
            "verified_defect": self.verified_defect,
            "frame_length": self.frame_length,
            "milnor_margin": self.milnor_margin,
            "min_u": [float(v) for v in self.min_u],
            "restart": self.restart,
            "restarts_run": self.restarts_run,
            "iterations": self.iterations,
            "seed": self.seed,
            "budget": self.budget,
            "controls": self.controls.to_dict(),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def _basis(t, modes: int, m: int) -> np.ndarray:
    k = np.arange(1, modes + 1)
    ph = np.outer(t, k) / m
    return np.concatenate([np.ones((t.size, 1)), np.stack([np.cos(ph), np.sin(ph)], -1).reshape(t.size, 2 * modes)], 1)


def closure_search(
    n: int,
    m: int,
    fourier_modes: int = 8,
    floor: float = 1e-3,
    seed: int = 0,
    *,
    restarts: int = 200,
    max_iter: int = 500,
    batch: int = 25,
    bias: float = 0.1,
    radius: float = 0.5,
    band: float = 0.5,
    spread: float = 0.6,
    weight: float = 10.0,
    tol: float = 1e-6,
    polish: float = 1e-3,
    steps: int | None = None,
    stall: int = 25,
) -> ClosureReport:
    """Search for positive controls near the m-times run plane curve whose curve and frame close.

    Unknowns are the Fourier coefficients of u_1 .. u_{n-1}.  Levenberg-Marquardt
    minimizes the closure residual (gamma(T) - gamma(0), E(T) - E(0)) together
    with hinge penalties (weight ``weight``) at dense sample times that keep
    the perturbation admissible and small:

    * u_i >= 1.5 floor for every i (positivity, with margin);
    * u_i <= radius for i >= 2 (small out-of-plane controls);
    * |e_j(t) - e_j(0)| <= band for j >= 3 (the curve stays near a plane).

    u_1 is otherwise free, since the frame length of a plane convex curve does
    not depend on its shape.  Restart ``r`` starts from u_1 = 1, u_i = bias
    with mode-decaying Gaussian noise (``spread`` for u_1, ``bias`` for the
    others) from the stream ``(seed, r)``.  Restarts run in batches of
    ``batch``.  Rows ending with defect below ``polish`` get a short
    closure-only refinement.  A candidate succeeds when its defect is below ``tol``, the
    re-integration with twice the steps confirms it and the dense minima satisfy
    u_1 > 0 and u_i >= floor.  The lowest successful restart index wins;
    otherwise the best defect over the budget is reported as FAILURE.
    """
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 and m >= 1")
    K = int(fourier_modes)
    d = 2 * K + 1
    shape = (n - 1, d)
    T = 2 * np.pi * m
    probe = FrenetControls(n, m, np.zeros(shape), floor)
    steps = _default_steps(probe) if steps is None else int(steps)
    ts = np.linspace(0.0, T, 16 * (K + 1) * m, endpoint=False)
    Bs = _basis(ts, K, m)
    stride = max(1, steps // ts.size)
    eye = np.eye(n)
    decay = np.repeat(np.arange(1, K + 1), 2).astype(float)

    def residual(z):
        U = z.reshape((-1,) + shape)
        E = _magnus_steps(U, n, m, T, steps)
        g = _gamma_from_frames(E, T)
        parts = [g[:, -1], (E[:, -1] - eye).reshape(U.shape[0], -1)]
        vals = np.einsum("tj,bij->bit", Bs, U)
        parts.append(weight * np.minimum(vals - 1.5 * floor, 0.0).reshape(U.shape[0], -1))
        if n > 2:
            parts.append(weight * np.maximum(vals[:, 1:] - radius, 0.0).reshape(U.shape[0], -1))
            dev = np.linalg.norm(E[:, ::stride, :, 2:] - eye[:, 2:], axis=-2)
            parts.append(weight * np.maximum(dev - band, 0.0).reshape(U.shape[0], -1))
        return np.concatenate(parts, axis=1)

    def closure(z):
        U = z.reshape((-1,) + shape)
        E = _magnus_steps(U, n, m, T, steps)
        g = _gamma_from_frames(E, T)
        return np.concatenate([g[:, -1], (E[:, -1] - eye).reshape(U.shape[0], -1)], axis=1)

    def start(r):
        rng = np.random.default_rng([seed, int(r)])
        z = np.zeros(shape)
        z[0, 0] = 1.0
        z[0, 1:] = spread * rng.standard_normal(d - 1) / decay
        if n > 2:
            z[1:, 0] = bias
            z[1:, 1:] = bias * rng.standard_normal((n - 2, d - 1)) / decay
        return z.ravel()

    def band_dev(tr):
        return float(np.max(np.linalg.norm(tr.E[:, :, 2:] - eye[:, 2:], axis=-2))) if n > 2 else 0.0

    best = None  # (defect, restart, controls, iterations)
    success = None
    run = 0
    for lo in range(0, restarts, batch):
        idx = np.arange(lo, min(lo + batch, restarts))
        res = levenberg_marquardt(residual, np.stack([start(r) for r in idx]), target=0.1 * tol,
                                  max_iter=max_iter, stall=stall, stall_ratio=0.99)
        run = int(idx[-1]) + 1
        x = res.x.copy()
        near = np.flatnonzero(np.linalg.norm(closure(x), axis=1) < polish)
        if near.size:
            # closure-only Gauss-Newton steps are near minimum-norm, so admissibility is rechecked below
            x[near] = levenberg_marquardt(closure, x[near], target=0.01 * tol, max_iter=50).x
        for j in range(idx.size):
            ctrl = FrenetControls(n, m, x[j].reshape(shape), floor, strict=True)
            dfc = integrate_frenet(ctrl, steps).defect
            if best is None or dfc < best[0]:
                best = (dfc, int(idx[j]), ctrl, int(res.iterations[j]))
            if success is None and dfc < tol:
                mins = ctrl.minima()
                admissible = mins[0] > 0 and (n == 2 or np.min(mins[1:]) >= floor)
                check = integrate_frenet(ctrl, 2 * steps)
                if admissible and check.defect < tol:
                    success = (dfc, int(idx[j]), ctrl, int(res.iterations[j]), check)
        if success is not None:
            break

    budget = {"restarts": restarts, "max_iter": max_iter, "fourier_modes": K, "steps": steps, "tol": tol,
              "bias": bias, "radius": radius, "band": band, "spread": spread, "weight": weight, "polish": polish}
    if success is not None:
        dfc, r, ctrl, it, check = success
        status = "SUCCESS"
    else:
        dfc, r, ctrl, it = best
        check = integrate_frenet(ctrl, 2 * steps)
        status = "FAILURE"
    budget["band_deviation"] = band_dev(check)
    return ClosureReport(status, n, m, float(dfc), float(check.defect), frame_length(ctrl),
                         [float(v) for v in ctrl.minima()], ctrl, r, run, it, seed, budget)


# -- Milnor bound -------------------------------------------------------------------------


def _curve_controls(curve: np.ndarray, T: float):
    """Frenet controls (u_1, u_2) of a closed space curve sampled uniformly over one period."""
    N = curve.shape[0]
    w = 2 * np.pi * np.fft.fftfreq(N, d=T / N)
    F = np.fft.fft(curve, axis=0)

    def deriv(k):
        D = (1j * w) ** k
        if N % 2 == 0 and k % 2 == 1:
            D[N // 2] = 0.0
        return np.fft.ifft(D[:, None] * F, axis=0).real

    d1, d2, d3 = deriv(1), deriv(2), deriv(3)
    speed = np.linalg.norm(d1, axis=1)
    cr = np.cross(d1, d2)
    ncr = np.linalg.norm(cr, axis=1)
    kappa = ncr / speed**3
    tau = np.einsum("ij,ij->i", cr, d3) / np.where(ncr > 0, ncr, 1.0) ** 2
    return kappa * speed, tau * speed


def milnor_check(obj, T: float | None = None, tol: float = 1e-8) -> tuple[float, float]:
    """Frame length of a nondegenerate closed space curve and its excess over 4 pi.

    ``obj`` is either :class:`FrenetControls` with n = 3 or a closed curve
    sampled uniformly over the period ``T`` (default 2 pi) as an (N, 3) array
    without the repeated endpoint.
    """
    if isinstance(obj, FrenetControls):
        if obj.n != 3:
            raise ValueError("the bound is stated for curves in R^3")
        t = np.linspace(0.0, obj.T, 8 * obj.sample_count(), endpoint=False)
        u = obj(t)
        if np.min(u[:, 1]) <= tol or np.min(u[:, 0]) <= tol:
            raise DegenerateCurveError(f"u_2 vanishes: min {np.min(u[:, 1]):.3g}")
        L = frame_length(obj)
    else:
        curve = np.asarray(obj, dtype=float)
        T = 2 * np.pi if T is None else float(T)
        u1, u2 = _curve_controls(curve, T)
        if np.min(np.abs(u2)) <= tol or np.min(u1) <= tol:
            raise DegenerateCurveError(f"torsion vanishes: min |u_2| {np.min(np.abs(u2)):.3g}")
        L = float(np.sum(np.hypot(u1, u2)) * T / curve.shape[0])
    return L, L - MILNOR_BOUND
