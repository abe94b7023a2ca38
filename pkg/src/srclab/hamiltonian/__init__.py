"""Fibre-polynomial Hamiltonians, metric Hamiltonians, contact forms and Reeb fields."""

from .catalog import (
    HEISENBERG_METRICS,
    STRUCTURE_NAMES,
    Structure,
    get_structure,
    heisenberg_frame,
    martinet_frame,
    su2_frame,
    su2_third_field,
)
from .metric import (
    ContactConditionError,
    ContactForm,
    HeisenbergRelationError,
    MetricCoeffs,
    NotPositiveDefiniteError,
    ReebField,
    ReebSolveError,
    frame_lifts,
    heisenberg_relations_hold,
    metric_hamiltonian,
    normalized_contact_form,
    reeb_field,
    reeb_lift_formula,
)
from .poly import FiberPoly, hamiltonian_lift, poisson_bracket

FiberPolyHamiltonian = FiberPoly

__all__ = [
    "FiberPoly",
    "FiberPolyHamiltonian",
    "hamiltonian_lift",
    "poisson_bracket",
    "MetricCoeffs",
    "ContactForm",
    "ReebField",
    "ContactConditionError",
    "HeisenbergRelationError",
    "NotPositiveDefiniteError",
    "ReebSolveError",
    "frame_lifts",
    "heisenberg_relations_hold",
    "metric_hamiltonian",
    "normalized_contact_form",
    "reeb_field",
    "reeb_lift_formula",
    "Structure",
    "get_structure",
    "heisenberg_frame",
    "martinet_frame",
    "su2_frame",
    "su2_third_field",
    "HEISENBERG_METRICS",
    "STRUCTURE_NAMES",
]
