"""Frenet control system, frame length, closure search and the Milnor bound."""

from .core import (
    MILNOR_BOUND,
    ClosureReport,
    DegenerateCurveError,
    FrameState,
    FrenetControls,
    FrenetTrajectory,
    NonFiniteControlError,
    closure_defect,
    closure_search,
    frame_length,
    integrate_frenet,
    milnor_check,
)

__all__ = [
    "MILNOR_BOUND",
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
