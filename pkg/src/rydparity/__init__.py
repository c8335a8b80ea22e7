"""Optimal-control synthesis and noise analysis of Rydberg parity phase gates."""

__version__ = "0.1.0"
