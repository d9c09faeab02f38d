"""Trajectory forecasting and Time-to-Collision conflict analysis for intersections."""

__version__ = "0.1.0"

HORIZONS_S = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
FPS = 30
MPH_TO_FPS = 5280.0 / 3600.0
