"""Sweeping-based implicit solvers for a 1D1V Boltzmann-Poisson system."""

__version__ = "0.1.0"
