"""Numerical laboratory for sub-Riemannian structures, Reeb-field diffusion and Frenet closure."""

__version__ = "0.1.0"
