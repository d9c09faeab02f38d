"""Trajectory tables: ingestion, stationary filtering, windowing and splitting.

Units follow the source data: feet, miles per hour, degrees.  A trajectory is
sampled at 30 fps; supervised samples are cut on a 15-frame (0.5 s) lattice.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError, SplitError
from .geometry import normalize_heading

log = logging.getLogger(__name__)

IN_STEPS = 10
OUT_STEPS = 6
STRIDE_FRAMES = 15
INPUT_FEATURES = ("x_ft", "y_ft", "speed_mph", "heading_deg")
TARGET_FEATURES = ("x_ft", "y_ft", "heading_deg")

# cross-check tolerance between the reported heading and the corner long axis
_AXIS_MISMATCH_DEG = 20.0


@dataclass(frozen=True)
class Waypoint:
    frame: int
    vehicle_id: str
    x_ft: float
    y_ft: float
    speed_mph: float
    heading_deg: float
    length_ft: float
    width_ft: float


@dataclass
class Trajectory:
    """One vehicle's track, stored column-wise.

    Arrays share length and are ordered by strictly increasing frame.
    """

    vehicle_id: str
    frame: np.ndarray
    x_ft: np.ndarray
    y_ft: np.ndarray
    speed_mph: np.ndarray
    heading_deg: np.ndarray
    length_ft: np.ndarray
    width_ft: np.ndarray

    def __post_init__(self):
        self.vehicle_id = str(self.vehicle_id)
        self.frame = np.asarray(self.frame, dtype=np.int64)
        for name in ("x_ft", "y_ft", "speed_mph", "heading_deg", "length_ft", "width_ft"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.frame)
        if any(len(getattr(self, k)) != n for k in _COLUMNS[1:]):
            raise DataError(f"vehicle {self.vehicle_id}: column lengths differ")
        if n > 1 and np.any(np.diff(self.frame) <= 0):
            bad = int(self.frame[1:][np.diff(self.frame) <= 0][0])
            raise DataError(f"vehicle {self.vehicle_id}: frames not strictly increasing at frame {bad}")

    def __len__(self):
        return len(self.frame)

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[Waypoint]) -> "Trajectory":
        if not waypoints:
            raise DataError("trajectory needs at least one waypoint")
        ids = {w.vehicle_id for w in waypoints}
        if len(ids) != 1:
            raise DataError(f"waypoints from several vehicles: {sorted(map(str, ids))}")
        return cls(
            vehicle_id=waypoints[0].vehicle_id,
            **{k: [getattr(w, k) for w in waypoints] for k in _COLUMNS},
        )

    @property
    def waypoints(self) -> list[Waypoint]:
        return [self.waypoint(i) for i in range(len(self))]

    def waypoint(self, i: int) -> Waypoint:
        return Waypoint(
            frame=int(self.frame[i]),
            vehicle_id=self.vehicle_id,
            x_ft=float(self.x_ft[i]),
            y_ft=float(self.y_ft[i]),
            speed_mph=float(self.speed_mph[i]),
            heading_deg=float(self.heading_deg[i]),
            length_ft=float(self.length_ft[i]),
            width_ft=float(self.width_ft[i]),
        )

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.vehicle_id, **{k: getattr(self, k)[start:stop] for k in _COLUMNS})


_COLUMNS = ("frame", "x_ft", "y_ft", "speed_mph", "heading_deg", "length_ft", "width_ft")


@dataclass
class SequenceSample:
    vehicle_id: str
    anchor_frame: int
    input: np.ndarray  # (10, 4): x_ft, y_ft, speed_mph, heading_deg
    target: np.ndarray  # (6, 3): x_ft, y_ft, heading_deg
    length_ft: float
    width_ft: float


@dataclass
class DatasetSplit:
    train: list[SequenceSample]
    test: list[SequenceSample]
    seed: int

    @property
    def train_vehicles(self) -> set[str]:
        return {s.vehicle_id for s in self.train}

    @property
    def test_vehicles(self) -> set[str]:
        return {s.vehicle_id for s in self.test}


@dataclass
class ColumnMapping:
    """Names of the source columns.

    Give either ``length``/``width`` or all eight ``corners`` columns
    (x1, y1, x2, y2, x3, y3, x4, y4 in perimeter order).
    """

    frame: str = "frame"
    vehicle_id: str = "vehicle_id"
    x: str = "x_ft"
    y: str = "y_ft"
    speed: str = "speed_mph"
    heading: str = "heading_deg"
    length: str | None = "length_ft"
    width: str | None = "width_ft"
    corners: list[str] | None = None

    def __post_init__(self):
        if self.corners is not None:
            if len(self.corners) != 8:
                raise SchemaError("corners mapping needs 8 column names (x1, y1, ... x4, y4)")
            self.corners = list(self.corners)
        elif self.length is None or self.width is None:
            raise SchemaError("mapping must name length/width columns or corner columns")

    @classmethod
    def from_dict(cls, d: dict | None) -> "ColumnMapping":
        return cls(**(d or {}))

    def required(self) -> list[str]:
        cols = [self.frame, self.vehicle_id, self.x, self.y, self.speed, self.heading]
        cols += self.corners if self.corners is not None else [self.length, self.width]
        return cols


def dims_from_corners(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Length, width and long-axis angle (deg, mod 180) from (n, 4, 2) corners."""
    c = np.asarray(corners, dtype=float)
    sides = np.roll(c, -1, axis=1) - c
    lens = np.hypot(sides[..., 0], sides[..., 1])
    a = 0.5 * (lens[:, 0] + lens[:, 2])
    b = 0.5 * (lens[:, 1] + lens[:, 3])
    long_side = np.where(a >= b, 0, 1)
    vec = sides[np.arange(len(c)), long_side]
    axis_deg = np.mod(np.degrees(np.arctan2(vec[:, 1], vec[:, 0])), 180.0)
    return np.maximum(a, b), np.minimum(a, b), axis_deg


def ingest_csv(path, mapping: ColumnMapping | None = None) -> list[Trajectory]:
    """Read a trajectory CSV into one Trajectory per vehicle, sorted by id."""
    mapping = mapping or ColumnMapping()
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    df = pd.read_csv(path, encoding="utf-8", dtype={mapping.vehicle_id: str}, float_precision="round_trip")
    for col in mapping.required():
        if col not in df.columns:
            raise SchemaError(f"missing column {col!r} in {path}")

    numeric = [c for c in mapping.required() if c != mapping.vehicle_id]
    for col in numeric:
        values = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            # +2: header line and 1-based numbering
            raise DataError(f"non-finite value in column {col!r} at row {row + 2}")
        df[col] = values

    frame = df[mapping.frame].to_numpy()
    if np.any(frame != np.round(frame)):
        row = int(np.flatnonzero(frame != np.round(frame))[0])
        raise DataError(f"non-integer frame at row {row + 2}")

    if mapping.corners is not None:
        pts = df[mapping.corners].to_numpy(dtype=float).reshape(-1, 4, 2)
        length, width, axis_deg = dims_from_corners(pts)
        mismatch = np.abs(np.mod(df[mapping.heading].to_numpy() - axis_deg + 90.0, 180.0) - 90.0)
        n_bad = int((mismatch > _AXIS_MISMATCH_DEG).sum())
        if n_bad:
            log.warning("%d rows: heading deviates >%.0f deg from the box long axis", n_bad, _AXIS_MISMATCH_DEG)
    else:
        length = df[mapping.length].to_numpy(dtype=float)
        width = df[mapping.width].to_numpy(dtype=float)

    table = pd.DataFrame(
        {
            "vehicle_id": df[mapping.vehicle_id].astype(str).to_numpy(),
            "frame": frame.astype(np.int64),
            "x_ft": df[mapping.x].to_numpy(dtype=float),
            "y_ft": df[mapping.y].to_numpy(dtype=float),
            "speed_mph": df[mapping.speed].to_numpy(dtype=float),
            "heading_deg": normalize_heading(df[mapping.heading].to_numpy(dtype=float)),
            "length_ft": length,
            "width_ft": width,
            "_row": np.arange(len(df)) + 2,
        }
    )
    if (table["speed_mph"] < 0).any():
        row = int(table.loc[table["speed_mph"] < 0, "_row"].iloc[0])
        raise DataError(f"negative speed at row {row}")
    if ((table["length_ft"] <= 0) | (table["width_ft"] <= 0)).any():
        row = int(table.loc[(table["length_ft"] <= 0) | (table["width_ft"] <= 0), "_row"].iloc[0])
        raise DataError(f"non-positive vehicle dimension at row {row}")

    table = table.sort_values(["vehicle_id", "frame"], kind="mergesort")
    dup = table.duplicated(["vehicle_id", "frame"])
    if dup.any():
        first = table[dup].iloc[0]
        raise DataError(
            f"duplicate frame {int(first['frame'])} for vehicle {first['vehicle_id']} (row {int(first['_row'])})"
        )

    out = []
    for vid, g in table.groupby("vehicle_id", sort=True):
        out.append(Trajectory(vid, **{k: g[k].to_numpy() for k in _COLUMNS}))
    return out


def write_trajectories_csv(trajectories: Iterable[Trajectory], path) -> None:
    """Write trajectories in the default ColumnMapping layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "vehicle_id", "x_ft", "y_ft", "speed_mph", "heading_deg", "length_ft", "width_ft"])
        for t in trajectories:
            for i in range(len(t)):
                w.writerow(
                    [int(t.frame[i]), t.vehicle_id]
                    + [repr(float(getattr(t, k)[i])) for k in _COLUMNS[1:]]
                )


def filter_stationary(traj: Trajectory, speed_eps: float = 0.5, min_run: int = 1) -> list[Trajectory]:
    """Split a trajectory into maximal runs with speed strictly above ``speed_eps``.

    Runs shorter than ``min_run`` waypoints are dropped.
    """
    if speed_eps < 0 or min_run < 1:
        raise ValueError("speed_eps must be >= 0 and min_run >= 1")
    moving = traj.speed_mph > speed_eps
    if not moving.any():
        return []
    edges = np.diff(np.concatenate([[0], moving.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [traj.slice(a, b) for a, b in zip(starts, stops) if b - a >= min_run]


def min_run_waypoints(steps: int, stride_frames: int = STRIDE_FRAMES) -> int:
    """Waypoints (at 30 fps) spanned by ``steps`` lattice points."""
    return (steps - 1) * stride_frames + 1


def window_sequences(
    traj: Trajectory,
    in_steps: int = IN_STEPS,
    out_steps: int = OUT_STEPS,
    stride_frames: int = STRIDE_FRAMES,
) -> list[SequenceSample]:
    """Cut sliding supervised windows on the lattice anchored at the first frame.

    Windows advance one lattice step; any window touching a lattice frame
    without a waypoint is skipped.
    """
    if len(traj) == 0:
        return []
    f0 = int(traj.frame[0])
    rel = traj.frame - f0
    on_lattice = rel % stride_frames == 0
    n_lat = int(rel[-1] // stride_frames) + 1
    idx = np.full(n_lat, -1, dtype=np.int64)
    idx[rel[on_lattice] // stride_frames] = np.flatnonzero(on_lattice)

    span = in_steps + out_steps
    if n_lat < span:
        return []
    present = idx >= 0
    # count of missing lattice points in each window via cumulative sums
    missing = np.concatenate([[0], np.cumsum(~present)])
    feats = np.stack([traj.x_ft, traj.y_ft, traj.speed_mph, traj.heading_deg], axis=1)
    samples = []
    for k in range(n_lat - span + 1):
        if missing[k + span] - missing[k]:
            continue
        rows = idx[k : k + span]
        anchor = rows[in_steps - 1]
        samples.append(
            SequenceSample(
                vehicle_id=traj.vehicle_id,
                anchor_frame=int(traj.frame[anchor]),
                input=feats[rows[:in_steps]].copy(),
                target=feats[rows[in_steps:]][:, [0, 1, 3]].copy(),
                length_ft=float(traj.length_ft[anchor]),
                width_ft=float(traj.width_ft[anchor]),
            )
        )
    return samples


def build_samples(
    trajectories: Iterable[Trajectory],
    speed_eps: float = 0.5,
    min_run_steps: int = IN_STEPS + OUT_STEPS,
) -> list[SequenceSample]:
    """Filter stationary waypoints, then window every moving segment."""
    min_run = min_run_waypoints(min_run_steps)
    out = []
    for t in trajectories:
        for seg in filter_stationary(t, speed_eps, min_run):
            out.extend(window_sequences(seg))
    return out


def split_dataset(samples: Sequence[SequenceSample], test_fraction: float = 0.30, seed: int = 0) -> DatasetSplit:
    """Vehicle-granular seeded split.

    Vehicles are shuffled, then moved to the test side while doing so brings
    the test sample count closer to ``test_fraction`` of all samples.
    """
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must be in (0, 1), got {test_fraction}")
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.vehicle_id] = counts.get(s.vehicle_id, 0) + 1
    vehicles = sorted(counts)
    if len(vehicles) < 2:
        raise SplitError(f"need at least 2 vehicles to split, got {len(vehicles)}")
    order = [vehicles[i] for i in np.random.default_rng(seed).permutation(len(vehicles))]

    target = test_fraction * len(samples)
    test_ids: set[str] = set()
    n_test = 0
    for vid in order:
        if len(test_ids) == len(vehicles) - 1:
            break
        if abs(n_test + counts[vid] - target) < abs(n_test - target) or not test_ids:
            test_ids.add(vid)
            n_test += counts[vid]
    train = [s for s in samples if s.vehicle_id not in test_ids]
    test = [s for s in samples if s.vehicle_id in test_ids]
    return DatasetSplit(train=train, test=test, seed=seed)


def sample_columns(in_steps: int = IN_STEPS, out_steps: int = OUT_STEPS) -> list[str]:
    cols = ["vehicle_id", "anchor_frame", "length_ft", "width_ft"]
    for t in range(in_steps):
        cols += [f"in{t}_{f}" for f in INPUT_FEATURES]
    for k in range(1, out_steps + 1):
        cols += [f"out{k}_{f}" for f in TARGET_FEATURES]
    return cols


def write_samples_csv(samples: Iterable[SequenceSample], path) -> None:
    """One row per sample; floats written with round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample_columns())
        for s in samples:
            row = [s.vehicle_id, s.anchor_frame, repr(float(s.length_ft)), repr(float(s.width_ft))]
            row += [repr(float(v)) for v in s.input.ravel()]
            row += [repr(float(v)) for v in s.target.ravel()]
            w.writerow(row)


def read_samples_csv(path) -> list[SequenceSample]:
    cols = sample_columns()
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != cols:
            missing = [c for c in cols if c not in header]
            raise SchemaError(f"samples file {path} has unexpected columns (missing {missing[:3]})")
        n_in = IN_STEPS * len(INPUT_FEATURES)
        for lineno, row in enumerate(r, start=2):
            try:
                vals = np.array([float(v) for v in row[4:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            out.append(
                SequenceSample(
                    vehicle_id=row[0],
                    anchor_frame=int(row[1]),
                    input=vals[:n_in].reshape(IN_STEPS, len(INPUT_FEATURES)),
                    target=vals[n_in:].reshape(OUT_STEPS, len(TARGET_FEATURES)),
                    length_ft=float(row[2]),
                    width_ft=float(row[3]),
                )
            )
    return out


def stack_samples(samples: Sequence[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (N, 10, 4) and targets (N, 6, 3) as float arrays."""
    if not samples:
        return np.zeros((0, IN_STEPS, 4)), np.zeros((0, OUT_STEPS, 3))
    return np.stack([s.input for s in samples]), np.stack([s.target for s in samples])


def waypoint_counts(trajectories: Iterable[Trajectory], speed_eps: float = 0.5) -> tuple[int, int]:
    """(stationary, moving) waypoint counts under the speed threshold."""
    stat = mov = 0
    for t in trajectories:
        m = int((t.speed_mph > speed_eps).sum())
        mov += m
        stat += len(t) - m
    return stat, mov
