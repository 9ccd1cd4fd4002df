"""Numerical and exact checks for polynomially integrable convex hypersurfaces."""

__version__ = "0.1.0"
