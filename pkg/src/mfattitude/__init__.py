"""Bayesian attitude estimation with the matrix Fisher distribution on SO(3)."""

__version__ = "0.1.0"
