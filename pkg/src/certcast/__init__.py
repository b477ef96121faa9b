"""Spectral-hyperbolic forecaster with constraint-certified outputs."""

__version__ = "0.1.0"
