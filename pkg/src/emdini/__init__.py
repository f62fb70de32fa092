"""Euler-Maruyama strong-convergence experiments for SDEs with Dini-continuous coefficients."""

__version__ = "0.1.0"
