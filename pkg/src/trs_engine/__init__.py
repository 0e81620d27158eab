"""Tidal range structure engine: 0D plant simulation, calibration and
reinforcement-learning operation."""

__version__ = "0.1.0"
