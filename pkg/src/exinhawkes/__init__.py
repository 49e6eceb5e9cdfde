"""Multivariate Hawkes processes with additive excitation and multiplicative inhibition."""

__version__ = "0.1.0"
