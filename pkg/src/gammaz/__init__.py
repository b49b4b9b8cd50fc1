"""Generalized Gamma-z calculus, curvature matrices and CD(kappa, inf) bounds."""

__version__ = "0.1.0"
