"""Density-based topology optimization under multi-axis machining accessibility constraints."""

__version__ = "0.1.0"
