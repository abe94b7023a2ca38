"""Vector fields on a chart, rank-2 frames, Lie brackets and bracket flags."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .nodes import ZERO, Expr, add, as_expr, compile_exprs, differentiate, mul, neg, sub
from .parser import parse_expr

__all__ = [
    "VectorField",
    "Frame2",
    "RankAmbiguityError",
    "FrameDegeneracyError",
    "lie_bracket",
    "iterated_brackets",
    "bracket_flag_dim",
    "RANK_RTOL",
]

RANK_RTOL = 1e-8


class RankAmbiguityError(ArithmeticError):
    def __init__(self, singular_values, threshold):
        self.singular_values = np.asarray(singular_values)
        self.threshold = threshold
        super().__init__(
            f"rank is ambiguous: singular values {self.singular_values} against threshold {threshold:.3g}"
        )


class FrameDegeneracyError(ValueError):
    pass


@dataclass(frozen=True)
class VectorField:
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if any(c.max_var > len(comps) for c in comps):
            raise ValueError("component uses a variable beyond the chart dimension")

    @classmethod
    def parse(cls, texts: Sequence[str]) -> "VectorField":
        n = len(texts)
        return cls(tuple(parse_expr(t, n) for t in texts))

    @classmethod
    def coordinate(cls, index: int, n: int) -> "VectorField":
        """The coordinate field d/dx_index."""
        return cls(tuple(as_expr(1 if k == index else 0) for k in range(1, n + 1)))

    @classmethod
    def zero(cls, n: int) -> "VectorField":
        return cls((ZERO,) * n)

    @property
    def dim(self) -> int:
        return len(self.components)

    def __len__(self):
        return self.dim

    def __getitem__(self, k: int) -> Expr:
        return self.components[k]

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_dims(self, other)
        return VectorField(tuple(add(a, b) for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_dims(self, other)
        return VectorField(tuple(sub(a, b) for a, b in zip(self.components, other.components)))

    def __neg__(self) -> "VectorField":
        return VectorField(tuple(neg(a) for a in self.components))

    def scale(self, f) -> "VectorField":
        f = as_expr(f)
        return VectorField(tuple(mul(f, a) for a in self.components))

    def __rmul__(self, f):
        return self.scale(f)

    def is_zero(self) -> bool:
        return all(c is ZERO for c in self.components)

    def apply(self, f: Expr) -> Expr:
        """Directional derivative F(f) = sum_k F^k df/dx_k."""
        out = ZERO
        for k, c in enumerate(self.components, start=1):
            out = add(out, mul(c, differentiate(f, k)))
        return out

    def evaluate(self, points) -> np.ndarray:
        """Values at points of shape ``(..., n)``; returns ``(..., n)``."""
        pts = np.asarray(points, dtype=float)
        vals = compile_exprs(self.components, self.dim)(pts)
        return np.moveaxis(vals, 0, -1)

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def jacobian(self) -> tuple[tuple[Expr, ...], ...]:
        """Symbolic matrix J[i][k] = dF^i/dx_k."""
        return tuple(
            tuple(differentiate(c, k) for k in range(1, self.dim + 1)) for c in self.components
        )

    def __str__(self) -> str:
        terms = [f"({c})*d{k}" for k, c in enumerate(self.components, start=1) if c is not ZERO]
        return " + ".join(terms) if terms else "0"


def _check_dims(a: VectorField, b: VectorField) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def lie_bracket(F: VectorField, G: VectorField) -> VectorField:
    """[F, G]^j = F(G^j) - G(F^j)."""
    _check_dims(F, G)
    return VectorField(tuple(sub(F.apply(g), G.apply(f)) for f, g in zip(F.components, G.components)))


@dataclass(frozen=True)
class Frame2:
    """An ordered pair of fields spanning a rank-2 distribution on a 3-dimensional chart.

    ``orientation`` fixes which ordering of the pair counts as positive for the
    area form.  ``domain`` is the box ``((lo1, hi1), (lo2, hi2), (lo3, hi3))``
    on which the frame is declared; independence is spot-checked on a sample
    grid of that box at construction.
    """

    f1: VectorField
    f2: VectorField
    orientation: int = 1
    domain: tuple[tuple[float, float], ...] = ((-1.0, 1.0),) * 3
    name: str = ""
    sample: int = field(default=5, compare=False)

    def __post_init__(self):
        if self.f1.dim != 3 or self.f2.dim != 3:
            raise ValueError("Frame2 lives on a 3-dimensional chart")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        object.__setattr__(self, "domain", tuple((float(a), float(b)) for a, b in self.domain))
        pts = self.sample_points(self.sample)
        cross = np.cross(self.f1(pts), self.f2(pts))
        if np.min(np.linalg.norm(cross, axis=-1)) < 1e-12:
            raise FrameDegeneracyError("f1 and f2 are dependent somewhere on the sample grid")

    @classmethod
    def parse(cls, f1: Sequence[str], f2: Sequence[str], **kw) -> "Frame2":
        return cls(VectorField.parse(f1), VectorField.parse(f2), **kw)

    @property
    def dim(self) -> int:
        return 3

    @property
    def fields(self) -> tuple[VectorField, VectorField]:
        return (self.f1, self.f2)

    def bracket(self) -> VectorField:
        return lie_bracket(self.f1, self.f2)

    def sample_points(self, k: int = 5) -> np.ndarray:
        axes = [np.linspace(lo, hi, k) for lo, hi in self.domain]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def with_orientation(self, orientation: int) -> "Frame2":
        return Frame2(self.f1, self.f2, orientation, self.domain, self.name)


def iterated_brackets(fields: Sequence[VectorField], k: int) -> list[VectorField]:
    """All right-nested brackets [f_i1, [f_i2, ... f_ij]] with j <= k (duplicates removed)."""
    if k < 1:
        raise ValueError("bracket length must be >= 1")
    levels = [list(fields)]
    for _ in range(k - 1):
        nxt = []
        for f, g in product(fields, levels[-1]):
            b = lie_bracket(f, g)
            if not b.is_zero():
                nxt.append(b)
        levels.append(nxt)
    out, seen = [], set()
    for lvl in levels:
        for v in lvl:
            if v.components not in seen:
                seen.add(v.components)
                out.append(v)
    return out


def bracket_flag_dim(frame: Frame2 | Sequence[VectorField], q, k: int) -> int:
    """dim n_k(q): span of the frame's iterated brackets of length <= k at q."""
    fields = frame.fields if isinstance(frame, Frame2) else tuple(frame)
    vals = np.array([v.evaluate(np.asarray(q, dtype=float)) for v in iterated_brackets(fields, k)])
    s = np.linalg.svd(vals, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    threshold = RANK_RTOL * s[0]
    rank = int(np.sum(s > threshold))
    if s[rank - 1] < 10 * threshold:
        raise RankAmbiguityError(s, threshold)
    return rank
