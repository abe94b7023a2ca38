"""Batched multi-start Levenberg-Marquardt for small nonlinear least-squares problems.

All restarts advance in lock step so the residual function is called on a
``(R, k)`` batch; rows that converge or stall are frozen.  Non-finite
residuals are treated as infinite cost, so the damping grows until the step
returns to an evaluable region.  Jacobians use forward differences with all
perturbed copies evaluated in one batched call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LMResult", "levenberg_marquardt"]


@dataclass
class LMResult:
    x: np.ndarray  # (R, k)
    residual: np.ndarray  # (R, m)
    norm: np.ndarray  # (R,) Euclidean residual norm
    iterations: np.ndarray  # (R,)
    converged: np.ndarray  # (R,) bool: norm <= target


def _norms(r):
    with np.errstate(all="ignore"):
        n = np.sqrt(np.sum(r * r, axis=-1))
    return np.where(np.isfinite(n), n, np.inf)


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    *,
    target: float = 1e-10,
    max_iter: int = 100,
    fd_step: float = 1e-7,
    lam0: float = 1e-3,
    xtol: float = 1e-14,
    stall: int = 0,
    stall_ratio: float = 0.999,
) -> LMResult:
    """Minimize ``|fun(x)|`` independently for each row of ``x0``.

    ``fun`` maps ``(B, k)`` to ``(B, m)``.  A row stops when its residual norm
    drops below ``target``, when its step becomes negligible, when damping
    explodes, or (if ``stall > 0``) when the norm has not improved by the factor
    ``stall_ratio`` over ``stall`` consecutive iterations.
    """
    x = np.array(x0, dtype=float)
    R, k = x.shape
    r = np.asarray(fun(x), dtype=float)
    nrm = _norms(r)
    lam = np.full(R, lam0)
    iters = np.zeros(R, dtype=int)
    active = nrm > target
    best_hist = nrm.copy()
    since = np.zeros(R, dtype=int)
    eye = np.eye(k)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ra = x[idx], r[idx]
        h = fd_step * np.maximum(1.0, np.abs(xa))  # (a, k)
        pert = np.repeat(xa[:, None, :], k, axis=1) + h[:, :, None] * eye[None]
        rp = np.asarray(fun(pert.reshape(-1, k)), dtype=float).reshape(idx.size, k, -1)
        J = (rp - ra[:, None, :]) / h[:, :, None]  # (a, k, m) = dr/dx_j
        J = np.transpose(J, (0, 2, 1))  # (a, m, k)
        bad_j = ~np.all(np.isfinite(J), axis=(1, 2))
        J[bad_j] = 0.0
        JtJ = J.transpose(0, 2, 1) @ J
        g = (J.transpose(0, 2, 1) @ ra[:, :, None])[..., 0]
        diag = np.maximum(np.einsum("aii->ai", JtJ), 1e-12)

        la = lam[idx]
        # try up to a few damping levels per iteration
        accepted = np.zeros(idx.size, dtype=bool)
        for _try in range(6):
            todo = ~accepted
            if not np.any(todo):
                break
            Mt = JtJ[todo] + la[todo, None, None] * (diag[todo, :, None] * eye[None])
            try:
                step = -np.linalg.solve(Mt, g[todo][:, :, None])[..., 0]
            except np.linalg.LinAlgError:
                step = -np.stack([np.linalg.lstsq(m_, g_, rcond=None)[0] for m_, g_ in zip(Mt, g[todo])])
            xt = xa[todo] + step
            rt = np.asarray(fun(xt), dtype=float)
            nt = _norms(rt)
            ok = nt < nrm[idx][todo]
            sub = np.flatnonzero(todo)
            good = sub[ok]
            gi = idx[good]
            x[gi] = xt[ok]
            r[gi] = rt[ok]
            small = np.linalg.norm(step[ok], axis=-1) <= xtol * (np.linalg.norm(xt[ok], axis=-1) + xtol)
            nrm[gi] = nt[ok]
            la[good] = np.maximum(la[good] / 3.0, 1e-12)
            accepted[good] = True
            la[sub[~ok]] *= 4.0
            # negligible accepted steps end the row
            active[gi[small]] = False
        lam[idx] = la
        iters[idx] += 1
        stuck = (~accepted) & (la > 1e12)
        active[idx[stuck]] = False
        active &= nrm > target
        if stall > 0:
            improved = nrm < stall_ratio * best_hist
            best_hist = np.where(improved, nrm, best_hist)
            since = np.where(improved, 0, since + 1)
            active &= since < stall

    return LMResult(x, r, nrm, iters, nrm <= target)
