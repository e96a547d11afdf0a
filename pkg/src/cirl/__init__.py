"""Causal inference of the reproduction number from daily incidence."""

__version__ = "0.1.0"
