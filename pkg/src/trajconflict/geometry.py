"""Oriented boxes, separating-axis intersection and circular angle helpers.

Headings are degrees counterclockwise from +x; +x east, +y north.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MIN_BOX_DIM_FT = 1e-6


class Point2(NamedTuple):
    x: float
    y: float


def normalize_heading(deg):
    """Wrap an angle (scalar or array) into [0, 360)."""
    wrapped = np.mod(deg, 360.0)
    # np.mod(-1e-17, 360) rounds to 360.0
    wrapped = np.where(wrapped >= 360.0, 0.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def angle_diff_deg(a, b):
    """Minimal circular distance between two headings, in [0, 180]."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 360.0))
    d = np.minimum(d, 360.0 - d)
    d = np.clip(d, 0.0, 180.0)
    if np.ndim(d) == 0:
        return float(d)
    return d


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    length_ft: float
    width_ft: float
    heading_deg: float

    def __post_init__(self):
        for name in ("cx", "cy", "length_ft", "width_ft", "heading_deg"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"OrientedBox.{name} must be finite")
        if self.length_ft <= MIN_BOX_DIM_FT or self.width_ft <= MIN_BOX_DIM_FT:
            raise ValueError(
                f"degenerate box: length={self.length_ft}, width={self.width_ft}"
            )
        object.__setattr__(self, "heading_deg", normalize_heading(self.heading_deg))

    @property
    def diagonal_ft(self) -> float:
        return math.hypot(self.length_ft, self.width_ft)

    def corners(self) -> np.ndarray:
        return box_corners(self)


def _corners_array(cx, cy, length, width, heading_deg) -> np.ndarray:
    th = math.radians(heading_deg)
    c, s = math.cos(th), math.sin(th)
    hl, hw = 0.5 * length, 0.5 * width
    # counterclockwise: rear-right, front-right, front-left, rear-left
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def box_corners(b: OrientedBox) -> np.ndarray:
    """Corner coordinates as a (4, 2) array in counterclockwise order."""
    return _corners_array(b.cx, b.cy, b.length_ft, b.width_ft, b.heading_deg)


def box_corner_points(b: OrientedBox) -> list[Point2]:
    return [Point2(float(x), float(y)) for x, y in box_corners(b)]


def _box_axes(heading_deg: float) -> tuple[np.ndarray, np.ndarray]:
    th = math.radians(heading_deg)
    return np.array([math.cos(th), math.sin(th)]), np.array([-math.sin(th), math.cos(th)])


def boxes_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    """True iff the closed rectangles share a point (touching counts)."""
    ca, cb = box_corners(a), box_corners(b)
    for axis in (*_box_axes(a.heading_deg), *_box_axes(b.heading_deg)):
        pa = ca @ axis
        pb = cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def separation_margin(a: OrientedBox, b: OrientedBox) -> float:
    """Signed SAT gap: positive is the largest separating-axis clearance,
    negative is minus the smallest projected overlap."""
    ca, cb = box_corners(a), box_corners(b)
    best_gap = -math.inf
    for axis in (*_box_axes(a.heading_deg), *_box_axes(b.heading_deg)):
        pa = ca @ axis
        pb = cb @ axis
        gap = max(pb.min() - pa.max(), pa.min() - pb.max())
        best_gap = max(best_gap, gap)
    return float(best_gap)


def point_in_box(b: OrientedBox, pts: np.ndarray) -> np.ndarray:
    """Vectorized closed containment test for an (n, 2) array of points."""
    u, v = _box_axes(b.heading_deg)
    d = np.asarray(pts, dtype=float) - np.array([b.cx, b.cy])
    return (np.abs(d @ u) <= 0.5 * b.length_ft) & (np.abs(d @ v) <= 0.5 * b.width_ft)


def corners_many(cx, cy, length, width, heading_deg) -> np.ndarray:
    """Corners for arrays of boxes, shape (n, 4, 2), same ordering as box_corners."""
    cx, cy, length, width, heading_deg = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (cx, cy, length, width, heading_deg))
    )
    th = np.radians(heading_deg)
    c, s = np.cos(th), np.sin(th)
    hl, hw = 0.5 * length, 0.5 * width
    lx = np.stack([-hl, hl, hl, -hl], axis=-1)
    ly = np.stack([-hw, -hw, hw, hw], axis=-1)
    x = cx[..., None] + lx * c[..., None] - ly * s[..., None]
    y = cy[..., None] + lx * s[..., None] + ly * c[..., None]
    return np.stack([x, y], axis=-1)


def boxes_intersect_many(a_fields, b_fields) -> np.ndarray:
    """Elementwise boxes_intersect over broadcastable field arrays.

    Each argument is a tuple (cx, cy, length, width, heading_deg).
    """
    ca = corners_many(*a_fields)
    cb = corners_many(*b_fields)
    ca, cb = np.broadcast_arrays(ca, cb)
    hit = np.ones(ca.shape[:-2], dtype=bool)
    for heading in (a_fields[4], b_fields[4]):
        th = np.radians(np.asarray(heading, dtype=float))
        for ux, uy in ((np.cos(th), np.sin(th)), (-np.sin(th), np.cos(th))):
            pa = ca[..., 0] * np.asarray(ux)[..., None] + ca[..., 1] * np.asarray(uy)[..., None]
            pb = cb[..., 0] * np.asarray(ux)[..., None] + cb[..., 1] * np.asarray(uy)[..., None]
            sep = (pa.max(axis=-1) < pb.min(axis=-1)) | (pb.max(axis=-1) < pa.min(axis=-1))
            hit &= ~sep
    return hit
