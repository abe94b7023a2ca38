"""Hamiltonian flows, Reeb transport and geodesic shooting."""

from .hamflow import (
    DomainExitError,
    HamiltonianVectorField,
    NonFiniteStateError,
    Trajectory,
    integrate_hamiltonian,
    rk4_fixed,
)
from .transport import CotangentTransport, flow_transport, reeb_transport
from .bvp import BvpSolution, BvpSolutionList, GeodesicShooter, solve_geodesic_bvp
