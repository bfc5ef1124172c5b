"""Robust minimum density-power-divergence estimation for one-shot device data."""

__version__ = "0.1.0"
