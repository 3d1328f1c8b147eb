"""Simulation of multi-technology substitution dynamics."""

__version__ = "0.1.0"
