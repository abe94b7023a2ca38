"""Experiments on the flat Martinet structure: surface, singular curves, cut locus, spheres."""

from .lab import (
    BvpNonConvergenceError,
    CutProbe,
    MartinetStructure,
    NotOnSurfaceError,
    SingularCurve,
    SphereSampleSet,
    SurfaceSamples,
    cut_locus_probe,
    distance_to_surface,
    martinet_surface,
    singular_candidate,
    singular_curve,
    sphere_sample,
)

__all__ = [
    "MartinetStructure",
    "SurfaceSamples",
    "SingularCurve",
    "CutProbe",
    "SphereSampleSet",
    "NotOnSurfaceError",
    "BvpNonConvergenceError",
    "martinet_surface",
    "distance_to_surface",
    "singular_curve",
    "singular_candidate",
    "cut_locus_probe",
    "sphere_sample",
]
