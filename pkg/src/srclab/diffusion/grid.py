"""Sampled metric coefficients on a chart grid with spectral or spline interpolation.

Each axis is periodic (trigonometric interpolation and FFT derivatives),
bounded (cubic splines) or a singleton.  A singleton axis means the
coefficients do not depend on that coordinate; the frame itself is still
evaluated at the true coordinates of every point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from ..expr import Frame2
from ..hamiltonian import MetricCoeffs, NotPositiveDefiniteError

__all__ = ["GridAxis", "GridMetricField"]


@dataclass(frozen=True)
class GridAxis:
    """``n`` nodes on ``[lo, hi)`` (periodic) or ``[lo, hi]``; ``n = 1`` puts one node at ``lo``."""

    lo: float
    hi: float
    n: int
    periodic: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("axis needs at least one node")
        if self.n > 1 and not self.hi > self.lo:
            raise ValueError("axis needs hi > lo")
        if self.n > 1 and not self.periodic and self.n < 4:
            raise ValueError("bounded axes need at least 4 nodes for cubic interpolation")

    @property
    def singleton(self) -> bool:
        return self.n == 1

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def nodes(self) -> np.ndarray:
        if self.singleton:
            return np.array([self.lo], dtype=float)
        if self.periodic:
            return self.lo + self.length * np.arange(self.n) / self.n
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def spacing(self) -> float:
        if self.singleton:
            return np.inf
        return self.length / (self.n if self.periodic else self.n - 1)

    def _wavenumbers(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=1.0 / self.n) * (2 * np.pi / self.length)

    def weights(self, x, order: int = 0) -> np.ndarray:
        """Matrix ``W`` (M, n) with ``W @ values`` the ``order``-th derivative at ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        if self.singleton:
            return np.full((x.size, 1), 1.0 if order == 0 else 0.0)
        if self.periodic:
            k = self._wavenumbers()
            c = np.ones(self.n)
            if self.n % 2 == 0:
                # Nyquist mode: cosine for even orders, dropped for odd ones
                c[self.n // 2] = 0.0 if order % 2 else 1.0
                k = k.copy()
                k[self.n // 2] = abs(k[self.n // 2])
            fac = (1j * k) ** order * c
            E =np.exp(1j * np.outer(x - self.lo, k))
            En = np.exp(-1j * np.outer(k, self.nodes - self.lo))
            return np.real((E * fac) @ En) / self.n
        spline = CubicSpline(self.nodes, np.eye(self.n), bc_type="not-a-knot")
        return spline(x, order) if order else spline(x)

    def derivative(self, values, order: int = 1, axis: int = 0) -> np.ndarray:
        """Derivative of gridded values at the nodes along ``axis``."""
        values = np.asarray(values, dtype=float)
        if order == 0:
            return values.copy()
        if self.singleton:
            return np.zeros_like(values)
        if self.periodic:
            k = self._wavenumbers()
            fac = (1j * k) ** order
            if self.n % 2 == 0 and order % 2:
                fac[self.n // 2] = 0.0
            shape = [1] * values.ndim
            shape[axis] = self.n
            spec = np.fft.fft(values, axis=axis) * fac.reshape(shape)
            return np.real(np.fft.ifft(spec, axis=axis))
        spline = CubicSpline(self.nodes, values, axis=axis, bc_type="not-a-knot")
        return spline(self.nodes, order)

    def wrap(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.periodic and not self.singleton:
            return self.lo + np.mod(x - self.lo, self.length)
        return x

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.singleton or self.periodic:
            return np.ones(x.shape, dtype=bool)
        return (x >= self.lo - 1e-12) & (x <= self.hi + 1e-12)

    def describe(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n, "periodic": self.periodic}


def _check_pd(a: np.ndarray, points: np.ndarray, what: str) -> None:
    det = a[..., 0] * a[..., 2] - a[..., 1] ** 2
    bad = ~((a[..., 0] > 0) & (det > 0) & np.isfinite(det))
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise NotPositiveDefiniteError(f"{what} not positive definite", points[tuple(idx)])


@dataclass(frozen=True, eq=False)
class GridMetricField:
    """Coefficients ``(a11, a12, a22)`` of ``A`` at the nodes of a 3-axis chart grid.

    ``values`` has shape ``(n1, n2, n3, 3)``.  Instances are never mutated;
    every dynamics step returns a new field.
    """

    frame: Frame2
    axes: tuple[GridAxis, GridAxis, GridAxis]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.axes) != 3:
            raise ValueError("grid needs three axes")
        shape = tuple(ax.n for ax in self.axes) + (3,)
        vals = np.array(self.values, dtype=float)
        if vals.shape != shape:
            raise ValueError(f"values must have shape {shape}, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        _check_pd(vals, self.points, "grid metric")

    @classmethod
    def from_metric(cls, frame: Frame2, metric: MetricCoeffs, axes, meta=None) -> "GridMetricField":
        axes = tuple(axes)
        pts = cls.node_points(axes)
        return cls(frame, axes, metric.evaluate(pts), dict(meta or {}))

    @staticmethod
    def node_points(axes) -> np.ndarray:
        return np.stack(np.meshgrid(*[ax.nodes for ax in axes], indexing="ij"), axis=-1)

    @property
    def points(self) -> np.ndarray:
        return self.node_points(self.axes)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(ax.n for ax in self.axes)

    @property
    def spacing(self) -> float:
        return min(ax.spacing for ax in self.axes)

    @property
    def delta(self) -> np.ndarray:
        a = self.values
        return a[..., 0] * a[..., 2] - a[..., 1] ** 2

    def matrices(self) -> np.ndarray:
        a = self.values
        return np.stack([np.stack([a[..., 0], a[..., 1]], -1), np.stack([a[..., 1], a[..., 2]], -1)], -2)

    def with_values(self, values, **meta) -> "GridMetricField":
        return GridMetricField(self.frame, self.axes, values, {**self.meta, **meta})

    # -- spectral/spline calculus on gridded data ---------------------------------

    def grad(self, g) -> np.ndarray:
        """Node gradient of gridded data ``g`` (n1, n2, n3, ...) -> (..., 3) appended."""
        g = np.asarray(g, dtype=float)
        return np.stack([ax.derivative(g, 1, axis=k) for k, ax in enumerate(self.axes)], axis=-1)

    def hessian(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        first = [ax.derivative(g, 1, axis=k) for k, ax in enumerate(self.axes)]
        H = np.empty(g.shape + (3, 3))
        for i, ax_i in enumerate(self.axes):
            for j in range(3):
                if j < i:
                    H[..., i, j] = H[..., j, i]
                elif j == i:
                    H[..., i, i] = ax_i.derivative(g, 2, axis=i)
                else:
                    H[..., i, j] = self.axes[j].derivative(first[i], 1, axis=j)
        return H

    def interpolate(self, g, points) -> np.ndarray:
        """Interpolate gridded data ``g`` (n1, n2, n3, *tail) at ``points`` (M, 3)."""
        g = np.asarray(g, dtype=float)
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        tail = g.shape[3:]
        W = [ax.weights(pts[:, k]) for k, ax in enumerate(self.axes)]
        flat = g.reshape(g.shape[:3] + (-1,))
        out = np.einsum("mi,ijkf->mjkf", W[0], flat)
        out = np.einsum("mj,mjkf->mkf", W[1], out)
        out = np.einsum("mk,mkf->mf", W[2], out)
        return out.reshape((pts.shape[0],) + tail)

    def inside(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for k, ax in enumerate(self.axes):
            ok &= ax.contains(pts[..., k])
        return ok

    # -- snapshots --------------------------------------------------------------------

    def to_csv(self, path) -> None:
        pts = self.points.reshape(-1, 3)
        vals = self.values.reshape(-1, 3)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "a11", "a12", "a22"])
            for p, v in zip(pts, vals):
                w.writerow([f"{c:.17g}" for c in p] + [f"{c:.17g}" for c in v])

    def describe(self) -> dict:
        return {"shape": list(self.shape), "axes": [ax.describe() for ax in self.axes]}
