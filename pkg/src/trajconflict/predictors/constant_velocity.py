"""Constant speed and heading extrapolation."""

from __future__ import annotations

import numpy as np

from .. import HORIZONS_S, MPH_TO_FPS


def constant_velocity_rows(last_rows: np.ndarray, horizons=HORIZONS_S) -> np.ndarray:
    """Extrapolate (N, 4) rows of (x, y, speed_mph, heading_deg) to (N, T, 3)."""
    last = np.atleast_2d(np.asarray(last_rows, dtype=float))
    t = np.asarray(horizons, dtype=float)
    v = last[:, 2] * MPH_TO_FPS
    th = np.radians(last[:, 3])
    out = np.empty((len(last), len(t), 3))
    out[..., 0] = last[:, None, 0] + (v * np.cos(th))[:, None] * t
    out[..., 1] = last[:, None, 1] + (v * np.sin(th))[:, None] * t
    out[..., 2] = last[:, None, 3]
    return out


class ConstantVelocity:
    name = "constant_velocity"

    def predict(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(inputs, dtype=float)
        return constant_velocity_rows(X[:, -1]), np.zeros(len(X), dtype=bool)
