"""Partial averaging, heat flow along the Reeb field, and their diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..expr import VectorField
from ..hamiltonian import NotPositiveDefiniteError
from .grid import GridMetricField
from .model import GridModel, as_model, lie_operator

__all__ = [
    "AveragingReport",
    "OrbitExitError",
    "StabilityBoundError",
    "STABILITY_S",
    "orbit_transport",
    "averaging_step",
    "scaled_averaging_step",
    "invariance_residual",
    "det_transport_check",
    "heat_rhs",
    "evolve_heat",
    "write_manifest",
]

# dt <= STABILITY_S * h^2 / max(delta) for the explicit RK4 heat stepper; the
# RK4 stability interval on the negative axis is 2.785, and the spectral
# second derivative has spectral radius (pi / h)^2, giving 0.282 h^2.
STABILITY_S = 0.25


class OrbitExitError(ArithmeticError):
    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"orbit left the chart box near {self.point.tolist()}")


class StabilityBoundError(ValueError):
    pass


@dataclass
class AveragingReport:
    eps: float
    nodes: int
    sup_change: float
    det_drift: float
    skipped: int
    total: int
    normalization: dict = field(default_factory=dict)

    @property
    def skipped_fraction(self) -> float:
        return self.skipped / max(self.total, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skipped_fraction"] = self.skipped_fraction
        return d


def _local(model, x, flow):
    return model.local(x, flow=flow)


def orbit_transport(model, q, times, *, flow: VectorField | None = None, max_step: float = 0.02):
    """Orbit points ``P_t q`` and frame-momentum transports ``B(t)`` at ``times``.

    ``q`` is (N, 3) and ``times`` a 1-D array; the result is ``(X, B, ok)`` with
    ``X`` (N, T, 3), ``B`` (N, T, 2, 2) and ``ok`` (N,) False for orbits that
    left the model's box.  Integration is RK4 from t = 0 outward in both
    directions with sub-steps no longer than ``max_step``.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    times = np.asarray(times, dtype=float)
    N, T = q.shape[0], times.size
    X = np.empty((N, T, 3))
    B = np.empty((N, T, 2, 2))
    ok = np.ones(N, dtype=bool)

    def rhs(x, Bm):
        L = _local(model, x, flow)
        return L.e, Bm @ L.C

    for sign in (1.0, -1.0):
        idx = np.flatnonzero(times * sign > 0) if sign > 0 else np.flatnonzero(times <= 0)
        if sign < 0:
            zero = idx[times[idx] == 0]
            X[:, zero] = q[:, None]
            B[:, zero] = np.eye(2)
            idx = idx[times[idx] < 0]
        order = idx[np.argsort(np.abs(times[idx]))]
        x, Bm, t = q.copy(), np.broadcast_to(np.eye(2), (N, 2, 2)).copy(), 0.0
        for j in order:
            span = times[j] - t
            n = max(1, int(np.ceil(abs(span) / max_step - 1e-12)))
            h = span / n
            for _ in range(n):
                k1x, k1b = rhs(x, Bm)
                k2x, k2b = rhs(x + 0.5 * h * k1x, Bm + 0.5 * h * k1b)
                k3x, k3b = rhs(x + 0.5 * h * k2x, Bm + 0.5 * h * k2b)
                k4x, k4b = rhs(x + h * k3x, Bm + h * k3b)
                x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
                Bm = Bm + (h / 6.0) * (k1b + 2 * k2b + 2 * k3b + k4b)
                ok &= model.inside(x)
            t = times[j]
            X[:, j] = x
            B[:, j] = Bm
    return X, B, ok


def _gauss(eps: float, nodes: int):
    s, w = np.polynomial.legendre.leggauss(nodes)
    return eps * s, eps * w


def _pulled_forms(model, q, t, flow=None, max_step=0.02):
    X, B, ok = orbit_transport(model, q, t, flow=flow, max_step=max_step)
    A_orbit = model.coeffs(X.reshape(-1, 3)).reshape(X.shape[:2] + (2, 2))
    K = B @ A_orbit @ np.swapaxes(B, -1, -2)  # (N, T, 2, 2)
    return K, ok, X


def _check_orbit_pd(A, X):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] ** 2
    bad = ~((A[..., 0, 0] > 0) & (det > 0))
    if np.any(bad):
        i = np.argwhere(bad)[0]
        raise NotPositiveDefiniteError("interpolated metric not positive definite on an orbit", X[tuple(i)])


def _integral(field: GridMetricField, eps: float, nodes: int, max_step: float):
    model = GridModel(field)
    t, w = _gauss(eps, nodes)
    q = field.points.reshape(-1, 3)
    X, B, ok = orbit_transport(model, q, t, max_step=max_step)
    A_orbit = model.coeffs(X.reshape(-1, 3)).reshape(X.shape[:2] + (2, 2))
    _check_orbit_pd(A_orbit, X)
    K = B @ A_orbit @ np.swapaxes(B, -1, -2)
    integral = np.einsum("t,ntij->nij", w, K)
    # det of the transported form relative to t = 0 (Reeb flows keep it constant)
    det = np.linalg.det(K)
    det0 = np.linalg.det(field.matrices().reshape(-1, 2, 2))
    drift = np.abs(det / det0[:, None] - 1.0)
    drift = float(np.max(drift[ok])) if np.any(ok) else 0.0
    return integral, ok, drift


def _assemble(field: GridMetricField, M, ok):
    cur = field.values.reshape(-1, 3)
    new = np.column_stack([M[:, 0, 0], 0.5 * (M[:, 0, 1] + M[:, 1, 0]), M[:, 1, 1]])
    new[~ok] = cur[~ok]  # held value where the orbit left the box
    return new.reshape(field.values.shape)


def averaging_step(field: GridMetricField, eps: float = 0.3, nodes: int = 9, *, max_step: float = 0.02):
    """h_{n+1} = (1 / 2 eps) int_{-eps}^{eps} h_n o U^t dt with Gauss-Legendre nodes."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    integral, ok, drift = _integral(field, eps, nodes, max_step)
    new = _assemble(field, integral / (2 * eps), ok)
    out = field.with_values(new, last_step={"kind": "average", "eps": eps, "nodes": nodes})
    change = float(np.max(np.abs(new - field.values)))
    report = AveragingReport(eps, nodes, change, drift, int(np.sum(~ok)), ok.size)
    return out, report


def scaled_averaging_step(field: GridMetricField, eps: float, c: float | None = None, nodes: int = 9,
                          *, max_step: float = 0.02):
    """c times the unnormalized orbit integral.

    The default ``c`` keeps the grid maximum of trace A unchanged; the chosen
    policy and value are recorded in the returned field's metadata.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    integral, ok, drift = _integral(field, eps, nodes, max_step)
    if c is None:
        tr_old = np.max(field.values[..., 0] + field.values[..., 2])
        tr_new = np.max(integral[:, 0, 0] + integral[:, 1, 1])
        c, policy = float(tr_old / tr_new), "preserve-max-trace"
    else:
        c, policy = float(c), "given"
    if not c > 0:
        raise ValueError("c must be positive")
    new = _assemble(field, c * integral, ok)
    change = float(np.max(np.abs(new - field.values)))
    norm = {"policy": policy, "c": c}
    out = field.with_values(new, last_step={"kind": "scaled-average", "eps": eps, "nodes": nodes, **norm})
    return out, AveragingReport(eps, nodes, change, drift, int(np.sum(~ok)), ok.size, norm)


def _covectors(n: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _lie_at(model, points=None) -> np.ndarray:
    """L[A] = e(A) + C A + A C^T at the given points (grid nodes by default)."""
    L = model.local(points) if points is not None else model.local()
    grad = model.coeff_gradient(points) if points is not None else model.coeff_gradient()
    dA_e = np.einsum("mijk,mk->mij", grad, L.e)
    return lie_operator(L.A, dA_e, L.C), L


def invariance_residual(field, n_covectors: int = 8, seed: int = 0, points=None) -> float:
    """sup |{u_h, h}| over sample points and unit covectors.

    Grid fields use their nodes; symbolic models use the frame's sample grid
    unless ``points`` is given.
    """
    model = as_model(field)
    if points is None and not isinstance(model, GridModel):
        points = model.frame.sample_points(model.frame.sample)
    lie, L = _lie_at(model, points)
    F, _ = model.jet(L.points)
    P = _covectors(n_covectors, seed)
    v = np.einsum("mia,ci->mca", F[:, :, :2], P)  # frame momenta (M, c, 2)
    vals = np.einsum("mca,mab,mcb->mc", v, lie, v)
    return float(np.max(np.abs(vals)))


def det_transport_check(model, q, eps: float = 0.5, nodes: int = 9, *, flow: VectorField | None = None,
                        max_step: float = 0.01) -> float:
    """max_t |det H^t - det H^0| with H^t the transported fibre form relative to h at ``q``.

    ``flow`` replaces the Reeb field by another transporting field (a negative
    control); the frame momenta are then transported by the distribution part
    of its brackets.
    """
    model = as_model(model)
    t, _ = _gauss(eps, nodes)
    t = np.concatenate([[0.0], t])
    K, ok, X = _pulled_forms(model, np.asarray(q, dtype=float)[None], t, flow=flow, max_step=max_step)
    if not ok[0]:
        raise OrbitExitError(X[0, -1])
    A0 = K[0, 0]
    w, V = np.linalg.eigh(A0)
    S = V @ np.diag(w ** -0.5) @ V.T
    H = S @ K[0] @ S
    return float(np.max(np.abs(np.linalg.det(H) - 1.0)))


def heat_rhs(field: GridMetricField, c: float = 1.0) -> np.ndarray:
    """c {u_h, {u_h, h}} as coefficient derivatives (n1, n2, n3, 3) on the grid."""
    model = GridModel(field)
    L1, L = _lie_at(model)
    shape = field.shape
    g = np.stack([L1[:, 0, 0], L1[:, 0, 1], L1[:, 1, 1]], -1).reshape(shape + (3,))
    grad = field.grad(g).reshape(-1, 3, 3)
    dL1_e = np.einsum("mck,mk->mc", grad, L.e)
    dL1_e = np.stack([np.stack([dL1_e[:, 0], dL1_e[:, 1]], -1), np.stack([dL1_e[:, 1], dL1_e[:, 2]], -1)], -2)
    L2 = lie_operator(L1, dL1_e, L.C)
    out = np.stack([L2[:, 0, 0], 0.5 * (L2[:, 0, 1] + L2[:, 1, 0]), L2[:, 1, 1]], -1)
    return c * out.reshape(shape + (3,))


def _is_pd(a) -> bool:
    det = a[..., 0] * a[..., 2] - a[..., 1] ** 2
    return bool(np.all((a[..., 0] > 0) & (det > 0) & np.isfinite(det)))


def evolve_heat(field: GridMetricField, c: float = 1.0, T: float = 0.1, dt: float | None = None,
                *, s: float = STABILITY_S, record_every: int = 1) -> GridMetricField:
    """Explicit RK4 for dA/dt = c {u_h, {u_h, h}}.

    The run refuses a step above ``s h^2 / (c max delta)``.  It halts at the
    first loss of positive definiteness, returning the last definite state with
    ``meta['generalized_metric'] = True``.  ``meta['history']`` records time,
    invariance residual and sup |A - A(0)| every ``record_every`` steps.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    bound = s * field.spacing**2 / (c * float(np.max(field.delta)))
    if dt is None:
        n = max(1, int(np.ceil(T / bound - 1e-12)))
    else:
        if dt > bound * (1 + 1e-12):
            raise StabilityBoundError(f"dt = {dt:g} exceeds the stability bound {bound:g} (s = {s})")
        n = max(1, int(np.ceil(T / dt - 1e-12)))
    h = T / n
    a0 = field.values
    cur = field
    history = [(0.0, invariance_residual(field), 0.0)]
    halted = None
    for i in range(n):
        y = cur.values
        k1 = heat_rhs(cur, c)
        stages = []
        try:
            k2 = heat_rhs(cur.with_values(y + 0.5 * h * k1), c)
            k3 = heat_rhs(cur.with_values(y + 0.5 * h * k2), c)
            k4 = heat_rhs(cur.with_values(y + h * k3), c)
            stages = [k2, k3, k4]
        except NotPositiveDefiniteError:
            pass
        y_new = y + (h / 6.0) * (k1 + 2 * stages[0] + 2 * stages[1] + stages[2]) if stages else None
        if y_new is None or not _is_pd(y_new):
            halted = (i * h, "positive definiteness lost")
            break
        cur = cur.with_values(y_new)
        if (i + 1) % record_every == 0 or i + 1 == n:
            history.append(((i + 1) * h, invariance_residual(cur), float(np.max(np.abs(y_new - a0)))))
    meta = {
        "heat": {"c": c, "T": T, "dt": h, "steps": n, "stability_s": s, "bound": bound},
        "history": history,
        "generalized_metric": halted is not None,
        "halt": None if halted is None else {"t": halted[0], "cause": halted[1]},
    }
    return cur.with_values(cur.values, **meta)


def write_manifest(path, **entries) -> None:
    """Run manifest as sorted-key JSON."""
    Path(path).write_text(json.dumps(entries, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)

