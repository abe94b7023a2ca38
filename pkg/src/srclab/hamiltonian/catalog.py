"""Named sub-Riemannian structures addressable from configuration.

* ``heisenberg-flat``: f1 = d1, f2 = d2 + x1 d3, A = I.
* ``heisenberg(a11, a12, a22)``: Heisenberg frame with the given dual coefficients.
* ``martinet-flat``: f1 = d1, f2 = d2 + x1^2 d3, A = I.
* ``su2-killing``: left-invariant fields X1, X2 of SU(2) = S^3 in the stereographic
  chart x -> ((1 - |x|^2) + 2x) / (1 + |x|^2) (unit quaternion, projected from -1),
  generated by i/2, j/2, k/2 so that [X1, X2] = X3 cyclically; A = I
  (the bi-invariant metric in which the X_i are orthonormal).  Components::

      X1 = ((1 + x1^2 - x2^2 - x3^2)/4,  x1 x2/2 + x3/2,  x1 x3/2 - x2/2)
      X2 = (x1 x2/2 - x3/2,  (1 - x1^2 + x2^2 - x3^2)/4,  x2 x3/2 + x1/2)
      X3 = (x1 x3/2 + x2/2,  x2 x3/2 - x1/2,  (1 - x1^2 - x2^2 + x3^2)/4)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..expr import Frame2, VectorField, parse_expr
from .metric import MetricCoeffs

__all__ = [
    "Structure",
    "heisenberg_frame",
    "martinet_frame",
    "su2_frame",
    "su2_third_field",
    "get_structure",
    "HEISENBERG_METRICS",
    "STRUCTURE_NAMES",
]

STRUCTURE_NAMES = ("heisenberg-flat", "heisenberg(a11,a12,a22)", "martinet-flat", "su2-killing")

HEISENBERG_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0), (-math.pi, math.pi))
MARTINET_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))
SU2_DOMAIN = ((-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))

# Test metrics on the Heisenberg frame (dual coefficients a11, a12, a22).
HEISENBERG_METRICS: dict[str, tuple[str, str, str]] = {
    "flat": ("1", "0", "1"),
    "scaled": ("4", "0", "4"),
    "diag41": ("4", "0", "1"),
    "unimodular-z": ("1 + 0.3*sin(x3)", "0", "1/(1 + 0.3*sin(x3))"),
    "phi": ("exp(0.4*sin(x1))", "0", "exp(-0.4*sin(x1))"),
    "sheared": ("1 + 0.25*x1^2", "0.2*sin(x3)", "1 + 0.1*cos(x3)"),
    "conformal": ("exp(0.3*x1*sin(x3))", "0", "exp(0.3*x1*sin(x3))"),
}


@dataclass(frozen=True)
class Structure:
    name: str
    frame: Frame2
    metric: MetricCoeffs

    @property
    def domain(self):
        return self.frame.domain


def heisenberg_frame(orientation: int = 1, domain=HEISENBERG_DOMAIN) -> Frame2:
    return Frame2.parse(("1", "0", "0"), ("0", "1", "x1"), orientation=orientation,
                        domain=domain, name="heisenberg")


def martinet_frame(domain=MARTINET_DOMAIN) -> Frame2:
    return Frame2.parse(("1", "0", "0"), ("0", "1", "x1^2"), domain=domain, name="martinet")


def su2_frame(domain=SU2_DOMAIN) -> Frame2:
    return Frame2.parse(
        ("(1 + x1^2 - x2^2 - x3^2)/4", "x1*x2/2 + x3/2", "x1*x3/2 - x2/2"),
        ("x1*x2/2 - x3/2", "(1 - x1^2 + x2^2 - x3^2)/4", "x2*x3/2 + x1/2"),
        domain=domain,
        name="su2",
    )


def su2_third_field() -> VectorField:
    return VectorField.parse(("x1*x3/2 + x2/2", "x2*x3/2 - x1/2", "(1 - x1^2 - x2^2 + x3^2)/4"))


def _split_args(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur.append(ch)
    parts.append("".join(cur).strip())
    return parts


def get_structure(name: str, metric=None) -> Structure:
    """Look up a catalog structure.

    ``metric`` optionally overrides the coefficients with a triple of expression
    strings, or a key of :data:`HEISENBERG_METRICS` for the Heisenberg frame.
    """
    key = name.strip()
    if key == "heisenberg-flat":
        frame, coeffs = heisenberg_frame(), HEISENBERG_METRICS["flat"]
    elif key.startswith("heisenberg(") and key.endswith(")"):
        args = _split_args(key[len("heisenberg("):-1])
        if len(args) != 3:
            raise ValueError("heisenberg(...) takes exactly three coefficient expressions")
        frame, coeffs = heisenberg_frame(), tuple(args)
    elif key == "heisenberg":
        frame, coeffs = heisenberg_frame(), HEISENBERG_METRICS["flat"]
    elif key == "martinet-flat":
        frame, coeffs = martinet_frame(), ("1", "0", "1")
    elif key == "su2-killing":
        frame, coeffs = su2_frame(), ("1", "0", "1")
    else:
        raise KeyError(f"unknown structure {name!r}; known: {', '.join(STRUCTURE_NAMES)}")
    if metric is not None:
        coeffs = HEISENBERG_METRICS[metric] if isinstance(metric, str) else tuple(metric)
    A = MetricCoeffs(*(parse_expr(str(c), 3) for c in coeffs))
    A.check_positive_definite(frame.sample_points(frame.sample))
    return Structure(key, frame, A)
