"""Quantum versus classical dynamical model selection from continuous
position-measurement records of a particle in a Duffing double well."""

from qcselect.params import DuffingParams, Numerics

__version__ = "0.1.0"

__all__ = ["DuffingParams", "Numerics", "__version__"]
