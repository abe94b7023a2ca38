"""Martinet surface, singular curves, cut-locus probes and sphere sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from ..expr import Frame2, compile_exprs
from ..flow import BvpSolutionList, HamiltonianVectorField, solve_geodesic_bvp
from ..hamiltonian import MetricCoeffs, martinet_frame, metric_hamiltonian

__all__ = [
    "MartinetStructure",
    "SurfaceSamples",
    "SingularCurve",
    "CutProbe",
    "SphereSampleSet",
    "NotOnSurfaceError",
    "BvpNonConvergenceError",
    "martinet_surface",
    "singular_curve",
    "cut_locus_probe",
    "sphere_sample",
    "distance_to_surface",
    "singular_candidate",
]


class NotOnSurfaceError(ValueError):
    def __init__(self, point, distance: float):
        self.point = np.asarray(point, dtype=float)
        self.distance = distance
        super().__init__(f"{self.point.tolist()} is {distance:.3g} away from the Martinet surface")


class BvpNonConvergenceError(ArithmeticError):
    pass


def _determinant_expr(frame: Frame2):
    from ..hamiltonian.metric import _cross, _dot

    return _dot(_cross(frame.f1.components, frame.f2.components), frame.bracket().components)


@dataclass(frozen=True, eq=False)
class MartinetStructure:
    """A rank-2 frame with metric and base point; defaults to the flat Martinet case."""

    frame: Frame2 = field(default_factory=martinet_frame)
    metric: MetricCoeffs = field(default_factory=MetricCoeffs.identity)
    q0: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def hamiltonian(self):
        return metric_hamiltonian(self.frame, self.metric)

    @property
    def determinant(self):
        return _determinant_expr(self.frame)

    def basis_covectors(self, q=None) -> np.ndarray:
        """Rows (a1, a2, a3): h(cos t a1 + sin t a2 + s a3) = 1 and a3 annihilates the distribution."""
        q = np.asarray(self.q0 if q is None else q, dtype=float)
        f1, f2 = self.frame.f1.evaluate(q), self.frame.f2.evaluate(q)
        n = np.cross(f1, f2)
        n = n / np.linalg.norm(n)
        M = np.array([f1, f2, n])
        dual = np.linalg.inv(M).T  # rows d_i with <d_i, M_j> = delta_ij
        A = self.metric.matrix(q)
        L = np.linalg.cholesky(A)
        W = np.linalg.inv(L).T  # v = W (cos, sin) has v^T A v = 1
        a12 = W.T @ dual[:2]
        return np.vstack([a12, dual[2]])


# -- Martinet surface -----------------------------------------------------------------


@dataclass
class SurfaceSamples:
    points: np.ndarray  # (K, 3) zero-set samples
    determinant: np.ndarray  # det(f1, f2, [f1, f2]) on the grid
    axes: tuple

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0


def martinet_surface(frame: Frame2, box=None, resolution: int = 21) -> SurfaceSamples:
    """Zero set of det(f1, f2, [f1, f2]) sampled on a grid: nodes where it vanishes plus
    linearly interpolated sign changes along grid edges."""
    box = frame.domain if box is None else tuple(tuple(b) for b in box)
    axes = tuple(np.linspace(lo, hi, resolution) for lo, hi in box)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    D = np.broadcast_to(compile_exprs((_determinant_expr(frame),), 3)(grid)[0], grid.shape[:3])
    scale = max(float(np.max(np.abs(D))), 1e-300)
    pts = [grid[np.abs(D) <= 1e-12 * scale]]
    for ax in range(3):
        a = np.moveaxis(D, ax, 0)
        g = np.moveaxis(grid, ax, 0)
        d0, d1 = a[:-1], a[1:]
        cross = (d0 * d1 < 0) & (np.abs(d0) > 1e-12 * scale) & (np.abs(d1) > 1e-12 * scale)
        lam = d0[cross] / (d0[cross] - d1[cross])
        pts.append(g[:-1][cross] + lam[:, None] * (g[1:][cross] - g[:-1][cross]))
    P = np.concatenate(pts, axis=0)
    if P.size:
        P = np.unique(np.round(P, 12), axis=0)
    return SurfaceSamples(P.reshape(-1, 3), D, axes)


# -- singular curves ------------------------------------------------------------------


@dataclass
class SingularCurve:
    times: np.ndarray
    points: np.ndarray

    @property
    def length(self) -> float:
        return float(abs(self.times[-1] - self.times[0]))

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


def _singular_direction(structure: MartinetStructure):
    fr = structure.frame
    D = structure.determinant
    f1D, f2D = fr.f1.apply(D), fr.f2.apply(D)
    exprs = tuple(fr.f1.components) + tuple(fr.f2.components) + (f1D, f2D) + tuple(structure.metric.components)
    fn = compile_exprs(exprs, 3)

    def direction(x):
        v = np.broadcast_to(fn(np.asarray(x, dtype=float)), (len(exprs),))
        f1, f2 = v[0:3], v[3:6]
        c = np.array([-v[7], v[6]])
        a11, a12, a22 = v[8:11]
        G = np.linalg.inv(np.array([[a11, a12], [a12, a22]]))
        norm = np.sqrt(c @ G @ c)
        if norm == 0:
            raise NotOnSurfaceError(x, np.inf)
        c = c / norm
        return c[0] * f1 + c[1] * f2

    return direction


def distance_to_surface(structure: MartinetStructure, q) -> float:
    """First-order distance |D| / |grad D| to the Martinet surface."""
    from ..expr import differentiate

    D = structure.determinant
    fn = compile_exprs((D,) + tuple(differentiate(D, k + 1) for k in range(3)), 3)
    v = np.broadcast_to(fn(np.asarray(q, dtype=float)), (4,))
    g = np.linalg.norm(v[1:])
    return float(abs(v[0]) / g) if g > 0 else (0.0 if v[0] == 0 else np.inf)


def singular_curve(structure: MartinetStructure | None, q_start, T: float, step: float = 1e-3,
                   tol: float = 1e-8) -> SingularCurve:
    """Unit-speed integral curve of the line field Delta cap TN from ``q_start`` for time ``T``.

    The direction is f1(D) f2 - f2(D) f1 (tangent to N = {D = 0}), oriented so
    that on the flat Martinet surface it is +d/dx2.
    """
    structure = MartinetStructure() if structure is None else structure
    q = np.asarray(q_start, dtype=float)
    dist = distance_to_surface(structure, q)
    if dist > tol:
        raise NotOnSurfaceError(q, dist)
    n = int(np.ceil(abs(T) / step - 1e-12)) if T != 0 else 0
    times = np.linspace(0.0, T, n + 1)
    pts = np.empty((n + 1, 3))
    pts[0] = q
    if n == 0:
        return SingularCurve(times, pts)
    w = _singular_direction(structure)
    h = T / n
    x = q.copy()
    for i in range(n):
        k1 = w(x)
        k2 = w(x + 0.5 * h * k1)
        k3 = w(x + 0.5 * h * k2)
        k4 = w(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        pts[i + 1] = x
    return SingularCurve(times, pts)


def singular_candidate(structure: MartinetStructure, q1, tol: float = 1e-7, step: float = 1e-3):
    """Length of the singular curve from q0 through ``q1``, or None if it misses ``q1``."""
    q0 = np.asarray(structure.q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if distance_to_surface(structure, q0) > tol or distance_to_surface(structure, q1) > tol:
        return None
    reach = 2.0 * float(np.linalg.norm(q1 - q0)) + step
    best = None
    for sign in (1.0, -1.0):
        c = singular_curve(structure, q0, sign * reach, step)
        spline = CubicSpline(c.times * sign, c.points)
        d = np.linalg.norm(c.points - q1, axis=1)
        i = int(np.argmin(d))
        lo, hi = abs(c.times[max(i - 1, 0)]), abs(c.times[min(i + 1, len(d) - 1)])
        res = minimize_scalar(lambda t: np.linalg.norm(spline(t) - q1), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        if res.fun <= tol and (best is None or res.x < best):
            best = float(res.x)
    return best


# -- cut-locus probes -----------------------------------------------------------------


@dataclass
class CutProbe:
    q1: np.ndarray
    distance: float
    multiplicity: int
    lengths: list  # lengths of the length-minimal solutions
    all_lengths: list  # every distinct converged solution
    singular_length: float | None
    solutions: BvpSolutionList

    def to_dict(self) -> dict:
        return {
            "q1": [float(v) for v in self.q1],
            "distance": self.distance,
            "multiplicity": self.multiplicity,
            "lengths": self.lengths,
            "all_lengths": self.all_lengths,
            "singular_length": self.singular_length,
            "restarts": self.solutions.restarts,
            "converged_restarts": self.solutions.converged_restarts,
            "minimal_covectors": [[float(v) for v in s.p0] for s in self.solutions.minimal],
        }


def cut_locus_probe(q1, restarts: int = 64, seed: int = 0, structure: MartinetStructure | None = None,
                    **bvp) -> CutProbe:
    """Count the distinct length-minimal geodesics from q0 to ``q1`` by multi-start shooting.

    If q0 and q1 lie on one singular curve its length is reported as well; it
    replaces the normal minimum only when shorter by more than the length tolerance.
    """
    structure = MartinetStructure() if structure is None else structure
    q1 = np.asarray(q1, dtype=float)
    sols = solve_geodesic_bvp(structure.hamiltonian, structure.q0, q1, restarts, seed, **bvp)
    sing = singular_candidate(structure, q1)
    if len(sols) == 0 and sing is None:
        raise BvpNonConvergenceError(f"no shooting solution converged for q1 = {q1.tolist()}")
    lengths = [s.length for s in sols.minimal]
    dist, mult = (sols.distance, sols.multiplicity) if len(sols) else (np.inf, 0)
    if sing is not None and sing < dist - sols.length_tol:
        dist, mult, lengths = sing, 1, [sing]
    return CutProbe(q1, float(dist), int(mult), lengths, [s.length for s in sols], sing, sols)


# -- sphere sampling --------------------------------------------------------------------


@dataclass
class SphereSampleSet:
    r: float
    thetas: np.ndarray  # (nt,)
    s_values: np.ndarray  # (ns,)
    covectors: np.ndarray  # (nt, ns, 3)
    endpoints: np.ndarray  # (nt, ns, 3)
    minimal: np.ndarray  # (nt, ns) bool
    singular: np.ndarray  # (nt, ns) bool: the path stays on the reflection plane
    maxwell_time: np.ndarray  # (nt, ns) first same-time meeting with the reflected partner
    labels: np.ndarray  # (nt, ns) component label of smooth minimal samples, -1 elsewhere
    component_sizes: list
    loops: list  # closed singular-locus polylines (K, 3)
    loops_closed: list
    decided: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def components(self) -> int:
        return len(self.component_sizes)

    @property
    def locus_length(self) -> float:
        return float(sum(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)) for p in self.loops))

    def summary(self) -> dict:
        return {
            "r": self.r,
            "resolution": [int(self.thetas.size), int(self.s_values.size)],
            "components": self.components,
            "component_sizes": [int(c) for c in self.component_sizes],
            "locus_loops": len(self.loops),
            "locus_closed": [bool(c) for c in self.loops_closed],
            "locus_length": self.locus_length,
            "decided": bool(self.decided),
            "minimal_samples": int(self.minimal.sum()),
            "singular_samples": int(self.singular.sum()),
            **{k: v for k, v in self.diagnostics.items()},
        }

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "s", "p1", "p2", "p3", "x1", "x2", "x3", "length", "minimal", "singular"])
            for i in range(self.thetas.size):
                for j in range(self.s_values.size):
                    w.writerow(
                        [f"{self.thetas[i]:.17g}", f"{self.s_values[j]:.17g}"]
                        + [f"{v:.17g}" for v in self.covectors[i, j]]
                        + [f"{v:.17g}" for v in self.endpoints[i, j]]
                        + [f"{self.r:.17g}", int(self.minimal[i, j]), int(self.singular[i, j])]
                    )

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), sort_keys=True, indent=2) + "\n")


def _shoot_tracking(field: HamiltonianVectorField, q0, P, r, n_steps, normal, record):
    """RK4 geodesics of h/2 with first sign changes of <normal, x - q0> and sampled paths."""
    B = P.shape[0]
    y = np.empty((6, B))
    y[:3] = np.asarray(q0, dtype=float)[:, None]
    y[3:] = P.T
    dt = r / n_steps
    half, sixth = 0.5 * dt, dt / 6.0
    nvec = np.asarray(normal, dtype=float)
    off = nvec @ np.asarray(q0, dtype=float)
    prev = np.zeros(B)
    sign0 = np.zeros(B)
    t_ret = np.full(B, np.inf)
    peak = np.zeros(B)
    keep = np.linspace(0, n_steps, record + 1).round().astype(int)
    paths = np.empty((B, record + 1, 3))
    paths[:, 0] = np.asarray(q0, dtype=float)
    slot = 1
    rhs = field.rows_rhs
    for i in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + half * k1)
        k3 = rhs(y + half * k2)
        k4 = rhs(y + dt * k3)
        y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        d = nvec @ y[:3] - off
        peak = np.maximum(peak, np.abs(d))
        fresh = (sign0 == 0) & (np.abs(d) > 1e-13)
        sign0[fresh] = np.sign(d[fresh])
        hit = np.isinf(t_ret) & (sign0 != 0) & (d * sign0 < 0)
        if np.any(hit):
            lam = prev[hit] / (prev[hit] - d[hit])
            t_ret[hit] = (i + lam) * dt
        prev = d
        if slot <= record and i + 1 == keep[slot]:
            paths[:, slot] = y[:3].T
            slot += 1
    return y[:3].T, paths, t_ret, peak


def _components(mask: np.ndarray):
    nt, ns = mask.shape
    idx = -np.ones(mask.shape, dtype=int)
    idx[mask] = np.arange(int(mask.sum()))
    rows, cols = [], []
    for di, dj in ((1, 0), (0, 1)):
        a = mask & np.roll(mask, -di, axis=0) if di else mask[:, :-1] & mask[:, 1:]
        if di:
            ii, jj = np.nonzero(a)
            rows.append(idx[ii, jj])
            cols.append(idx[(ii + 1) % nt, jj])
        else:
            ii, jj = np.nonzero(a)
            rows.append(idx[ii, jj])
            cols.append(idx[ii, jj + 1])
    n = int(mask.sum())
    r_, c_ = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(r_.size), (r_, c_)), shape=(n, n))
    ncomp, lab = connected_components(graph, directed=False)
    labels = -np.ones(mask.shape, dtype=int)
    labels[mask] = lab
    sizes = np.bincount(lab, minlength=ncomp) if n else np.zeros(0, dtype=int)
    # order components by their first grid index for deterministic labels
    first = {}
    for k, l_ in enumerate(labels[mask]):
        first.setdefault(int(l_), k)
    order = sorted(range(ncomp), key=lambda c: first[c])
    remap = -np.ones(max(ncomp, 1), dtype=int)
    for new, old in enumerate(order):
        remap[old] = new
    labels[mask] = remap[labels[mask]]
    return labels, [int(sizes[old]) for old in order]


def _splice_singular(pts, ti, sing_cols, ends_grid, nt):
    """Replace runs of contour points within one cell of a singular column by its endpoint."""
    if sing_cols.size == 0:
        return pts
    gap = np.abs((ti[:, None] - sing_cols[None, :] + nt / 2) % nt - nt / 2)
    near = gap.min(axis=1) < 1.0
    col = sing_cols[np.argmin(gap, axis=1)]
    ns = ends_grid.shape[1]
    out, prev = [], None
    for k in range(pts.shape[0]):
        if near[k]:
            if prev != col[k]:
                out.append(ends_grid[col[k], ns // 2])
            prev = col[k]
        else:
            out.append(pts[k])
            prev = None
    if near[0] and near[-1] and not np.array_equal(out[0], out[-1]):
        out.append(out[0])
    return np.array(out)


def _densify(poly, k=8):
    seg = np.diff(poly, axis=0)
    t = np.linspace(0, 1, k, endpoint=False)
    inner = (poly[:-1, None] + t[None, :, None] * seg[:, None]).reshape(-1, 3)
    return np.concatenate([inner, poly[-1:]], axis=0)


def _hausdorff(a, b):
    da, db = _densify(a), _densify(b)
    return max(cKDTree(db).query(da)[0].max(), cKDTree(da).query(db)[0].max())


def sphere_sample(
    r: float = 0.2,
    resolution: int | tuple[int, int] = 96,
    structure: MartinetStructure | None = None,
    *,
    s_max: float = 64.0,
    s_knee: float = 4.0,
    n_steps: int = 800,
    reflection=(1.0, 0.0, 0.0),
    record: int = 40,
    neighbour_tol: float = 1e-5,
    neighbour_margin: float = 0.1,
    min_component: int = 4,
    merge_tol: float = 0.05,
) -> SphereSampleSet:
    """Endpoints at length ``r`` of geodesics from a (theta, s) covector grid, with minimality.

    ``theta`` runs over ``2 pi i / n_theta`` and ``s = (s_knee / r^2)
    sinh(u asinh(s_max / s_knee))`` for ``u`` uniform in [-1, 1]; ``s r^2`` is
    invariant under the Martinet dilations.  A geodesic stops being minimal at its first same-time meeting
    with its mirror image under ``reflection`` (the plane normal through q0),
    i.e. when it first returns to that plane.  In addition a sample is marked
    non-minimal if some other sampled path reaches within ``neighbour_tol`` of
    its endpoint by time ``(1 - neighbour_margin) r``.  Paths that never leave
    the plane are the singular samples.  Components of the smooth part are
    counted on the 4-neighbour theta-periodic grid graph; the singular locus is
    the boundary of each component in covector space, mapped to endpoints.
    Boundary runs next to a singular column are replaced by that column's
    endpoint: nearby covectors reach it only logarithmically slowly.
    ``reflection=None`` disables the mirror test (experiment harness for
    perturbed metrics); the neighbourhood comparison still applies.
    """
    structure = MartinetStructure() if structure is None else structure
    nt, ns = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    thetas = 2 * np.pi * np.arange(nt) / nt
    stretch = np.arcsinh(s_max / s_knee)
    u = np.linspace(-1.0, 1.0, ns)
    s_vals = s_knee * np.sinh(stretch * u) / r**2
    a = structure.basis_covectors()
    TH, S = np.meshgrid(thetas, s_vals, indexing="ij")
    P = np.cos(TH)[..., None] * a[0] + np.sin(TH)[..., None] * a[1] + S[..., None] * a[2]
    field_ = HamiltonianVectorField(structure.hamiltonian, 0.5)
    normal = (1.0, 0.0, 0.0) if reflection is None else reflection
    ends, paths, t_ret, peak = _shoot_tracking(field_, structure.q0, P.reshape(-1, 3), r, n_steps, normal, record)
    singular = (peak <= 1e-10 * r) if reflection is not None else np.zeros(peak.shape, dtype=bool)
    maxwell = t_ret if reflection is not None else np.full(t_ret.shape, np.inf)
    minimal = maxwell >= r

    # shorter arrival near the endpoint: a conservative neighbourhood comparison
    times = np.linspace(0.0, r, record + 1)
    early = times <= (1.0 - neighbour_margin) * r
    cloud = paths[:, early].reshape(-1, 3)
    owner = np.repeat(np.arange(paths.shape[0]), int(early.sum()))
    tree = cKDTree(cloud)
    shortcut = np.zeros(paths.shape[0], dtype=bool)
    for k, hits in enumerate(tree.query_ball_point(ends, neighbour_tol)):
        if hits and np.any(owner[hits] != k):
            shortcut[k] = True
    minimal &= ~shortcut

    shape = (nt, ns)
    minimal = minimal.reshape(shape)
    singular = singular.reshape(shape)
    smooth = minimal & ~singular
    labels, sizes = _components(smooth)

    # singular locus: boundary of each component in covector space, pushed to endpoints
    sing_cols = np.flatnonzero(singular.any(axis=1))
    ends_grid = ends.reshape(shape + (3,))
    phi = np.where(np.isfinite(maxwell), np.minimum(maxwell, 2 * r), 2 * r).reshape(shape) - r
    loops, closed = [], []
    for c in range(len(sizes)):
        inside = labels == c
        empty_cols = np.flatnonzero(~inside.any(axis=1))
        shift = -int(empty_cols[0]) if empty_cols.size else 0
        fc = np.where(np.roll(inside, shift, axis=0), np.roll(phi, shift, axis=0), -r)
        fc = np.pad(fc, 1, constant_values=-r)
        contours = find_contours(fc, 0.0)
        if not contours:
            continue
        cont = max(contours, key=len) - 1.0
        ti = (cont[:, 0] - shift) % nt
        th = 2 * np.pi * ti / nt
        sv = s_knee * np.sinh(stretch * np.interp(cont[:, 1], np.arange(ns), u)) / r**2
        Pc = np.cos(th)[:, None] * a[0] + np.sin(th)[:, None] * a[1] + sv[:, None] * a[2]
        pts, _, _, _ = _shoot_tracking(field_, structure.q0, Pc, r, n_steps, normal, 1)
        poly = _splice_singular(pts, ti, sing_cols, ends_grid, nt)
        is_closed = bool(np.allclose(cont[0], cont[-1]))
        merged = False
        for k, other in enumerate(loops):
            if _hausdorff(poly, other) <= merge_tol * r:
                merged = True
                closed[k] = closed[k] and is_closed
                break
        if not merged:
            loops.append(poly)
            closed.append(is_closed)

    decided = bool(sizes) and min(sizes) >= min_component
    touching = bool(smooth[:, 0].any() or smooth[:, -1].any())
    decided = decided and not touching
    diag = {
        "s_max": s_max,
        "n_steps": n_steps,
        "maxwell_method": "reflection" if reflection is not None else "none",
        "shortcut_flags": int(shortcut.sum()),
        "basin_touches_s_window": touching,
    }
    return SphereSampleSet(
        r, thetas, s_vals, P, ends.reshape(shape + (3,)), minimal, singular, maxwell.reshape(shape),
        labels, sizes, loops, closed, decided, diag,
    )
