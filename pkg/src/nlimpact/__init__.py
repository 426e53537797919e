"""Optimal execution with nonlinear transient impact: Fredholm scheme, LSMC and kernel fits."""

__version__ = "0.1.0"
