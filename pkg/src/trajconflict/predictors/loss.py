"""Position + angular MAE training loss.

Predictions and targets are arrays (..., T, 3) of (x_ft, y_ft, heading_deg).
Positions use plain absolute error; headings are compared through their sine
and cosine so that 5 and 355 degrees are close.
"""

from __future__ import annotations

import numpy as np


def _as_batch(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ValueError(f"expected (N, T, 3) or (T, 3), got shape {a.shape}")
    return a


def _checked(pred, target):
    pred, target = _as_batch(pred), _as_batch(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return pred, target


def position_loss(pred, target) -> float:
    pred, target = _checked(pred, target)
    n, t = pred.shape[:2]
    return float(np.abs(pred[..., :2] - target[..., :2]).sum() / (n * t))


def heading_loss(pred, target) -> float:
    pred, target = _checked(pred, target)
    n, t = pred.shape[:2]
    hp, ht = np.radians(pred[..., 2]), np.radians(target[..., 2])
    return float((np.abs(np.sin(hp) - np.sin(ht)) + np.abs(np.cos(hp) - np.cos(ht))).sum() / (n * t))


def loss(pred, target) -> float:
    """Total loss: position MAE term plus angular term."""
    return position_loss(pred, target) + heading_loss(pred, target)


def loss_grad(pred, target) -> np.ndarray:
    """d loss / d pred, same shape as the (batched) prediction.

    Uses sign(0) = 0 at the kinks of the absolute value.
    """
    pred, target = _checked(pred, target)
    n, t = pred.shape[:2]
    g = np.empty_like(pred)
    g[..., :2] = np.sign(pred[..., :2] - target[..., :2])
    hp, ht = np.radians(pred[..., 2]), np.radians(target[..., 2])
    s, c = np.sin(hp), np.cos(hp)
    g[..., 2] = (np.sign(s - np.sin(ht)) * c - np.sign(c - np.cos(ht)) * s) * (np.pi / 180.0)
    return g / (n * t)
