"""Calibration and simulation of linear market-impact propagator models."""

__version__ = "0.1.0"
