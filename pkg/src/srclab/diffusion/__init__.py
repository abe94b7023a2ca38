"""Partial averaging and heat flow of metrics along the Reeb field, with diagnostics."""

from .dynamics import (
    STABILITY_S,
    AveragingReport,
    OrbitExitError,
    StabilityBoundError,
    averaging_step,
    det_transport_check,
    evolve_heat,
    heat_rhs,
    invariance_residual,
    orbit_transport,
    scaled_averaging_step,
    write_manifest,
)
from .grid import GridAxis, GridMetricField
from .kappa import KappaPreconditionError, kappa_estimate, quotient_metric
from .model import FrameJet, GridModel, LocalData, SymbolicModel, as_model

__all__ = [
    "GridAxis",
    "GridMetricField",
    "GridModel",
    "SymbolicModel",
    "FrameJet",
    "LocalData",
    "as_model",
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
    "KappaPreconditionError",
    "kappa_estimate",
    "quotient_metric",
]
