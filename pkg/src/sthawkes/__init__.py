"""Multivariate spatio-temporal Hawkes point processes."""

__version__ = "0.1.0"
