"""Time-to-Collision conflicts from forecast geometry.

A pair is in conflict at a scan frame when their forecasts meet at some
horizon; TTC is the first such horizon.  In bounding-box mode forecasts meet
when the predicted oriented boxes intersect, in center-point mode when the
predicted centers come within ``cp_radius_ft``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import FPS, HORIZONS_S
from .data import IN_STEPS, STRIDE_FRAMES, Trajectory
from .geometry import boxes_intersect_many
from .predictors import TrajectoryForecast, predict_batch

log = logging.getLogger(__name__)

MODES = ("bounding_box", "center_point")
EVENT_COLUMNS = ["vehicle_a", "vehicle_b", "frame", "ttc_s", "mode", "x_ft", "y_ft"]
_HORIZONS = np.asarray(HORIZONS_S)
_PREDICT_CHUNK = 20000


@dataclass(frozen=True)
class ConflictEvent:
    vehicle_a: str
    vehicle_b: str
    frame: int
    ttc_s: float
    mode: str
    x_ft: float
    y_ft: float

    def __post_init__(self):
        if self.vehicle_a == self.vehicle_b:
            raise ValueError("conflict needs two distinct vehicles")
        if self.ttc_s not in HORIZONS_S:
            raise ValueError(f"ttc {self.ttc_s} not on the horizon grid")


@dataclass
class PairTimeline:
    pair: tuple[str, str]
    events: list[ConflictEvent] = field(default_factory=list)

    @property
    def detections(self) -> list[tuple[int, float]]:
        return [(e.frame, e.ttc_s) for e in self.events]

    def add(self, event: ConflictEvent):
        if self.events and event.frame <= self.events[-1].frame:
            raise ValueError("timeline frames must be strictly increasing")
        self.events.append(event)

    @property
    def min_ttc(self) -> float:
        return min(e.ttc_s for e in self.events)

    def min_event(self) -> ConflictEvent:
        """Earliest detection carrying the minimum TTC."""
        m = self.min_ttc
        return next(e for e in self.events if e.ttc_s == m)


@dataclass
class TTCSummary:
    thresholds: tuple[float, ...]
    tet_s: list[float]
    min_ttc_count: list[int]

    def rows(self):
        return [
            {"threshold_s": t, "tet_s": tet, "min_ttc_pairs": n}
            for t, tet, n in zip(self.thresholds, self.tet_s, self.min_ttc_count)
        ]


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def _first_hit(hits: np.ndarray) -> np.ndarray:
    """Index of the first True along the last axis, -1 where none."""
    any_hit = hits.any(axis=-1)
    return np.where(any_hit, hits.argmax(axis=-1), -1)


def _hits(pa, dims_a, pb, dims_b, mode, cp_radius_ft):
    """(P, 6) contact flags for predicted rows pa, pb (P, 6, 3) and dims (P, 2)."""
    if mode == "bounding_box":
        la, wa = dims_a[:, 0:1], dims_a[:, 1:2]
        lb, wb = dims_b[:, 0:1], dims_b[:, 1:2]
        return boxes_intersect_many(
            (pa[..., 0], pa[..., 1], la, wa, pa[..., 2]),
            (pb[..., 0], pb[..., 1], lb, wb, pb[..., 2]),
        )
    if mode == "center_point":
        return np.hypot(pa[..., 0] - pb[..., 0], pa[..., 1] - pb[..., 1]) <= cp_radius_ft
    raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")


def detect_ttc_event(fa: TrajectoryForecast, fb: TrajectoryForecast, mode="bounding_box", cp_radius_ft=3.0):
    """(ttc_s, (x, y)) at the first contact horizon, or None."""
    if fa.anchor_frame != fb.anchor_frame:
        raise ValueError(f"forecasts anchored at different frames: {fa.anchor_frame} vs {fb.anchor_frame}")
    pa, pb = fa.as_array()[None], fb.as_array()[None]
    k = int(
        _first_hit(
            _hits(pa, np.array([[fa.length_ft, fa.width_ft]]), pb, np.array([[fb.length_ft, fb.width_ft]]), mode, cp_radius_ft)
        )[0]
    )
    if k < 0:
        return None
    mid = 0.5 * (pa[0, k, :2] + pb[0, k, :2])
    return HORIZONS_S[k], (float(mid[0]), float(mid[1]))


def detect_ttc(fa: TrajectoryForecast, fb: TrajectoryForecast, mode="bounding_box", cp_radius_ft=3.0) -> float | None:
    """Smallest forecast horizon (s) at which the two vehicles meet, or None."""
    hit = detect_ttc_event(fa, fb, mode, cp_radius_ft)
    return None if hit is None else hit[0]


@dataclass
class _VehicleForecasts:
    """Per-vehicle forecast table keyed by scan frame."""

    frames: np.ndarray
    rows: np.ndarray  # (F, 6, 3)
    current: np.ndarray  # (F, 2)
    stationary: np.ndarray  # (F,) bool
    length: np.ndarray
    width: np.ndarray


def _vehicle_forecasts(traj: Trajectory, scan_frames: np.ndarray, speed_eps: float):
    """Windows ending at each scan frame, plus stationary placeholders."""
    pos = {int(f): i for i, f in enumerate(traj.frame)}
    lag = STRIDE_FRAMES * np.arange(-(IN_STEPS - 1), 1)
    moving_rows, moving_frames, still = [], [], []
    for f in scan_frames:
        i = pos.get(int(f))
        if i is None:
            continue
        if traj.speed_mph[i] <= speed_eps:
            still.append((int(f), i))
            continue
        idx = [pos.get(int(f + d)) for d in lag]
        if any(j is None for j in idx):
            continue
        if np.any(traj.speed_mph[idx] <= speed_eps):
            continue
        moving_frames.append((int(f), i))
        moving_rows.append(idx)
    return moving_frames, moving_rows, still


def _build_forecasts(trajectories: Sequence[Trajectory], predictor, scan_frames: np.ndarray, speed_eps: float, model=None):
    feats_all, owners = [], []
    plans = []
    for v, traj in enumerate(trajectories):
        mf, mr, st = _vehicle_forecasts(traj, scan_frames, speed_eps)
        plans.append((mf, st))
        if mr:
            feats = np.stack([traj.x_ft, traj.y_ft, traj.speed_mph, traj.heading_deg], axis=1)
            feats_all.append(feats[np.asarray(mr)])
            owners.append(v)
    preds = {}
    if feats_all:
        X = np.concatenate(feats_all)
        out = np.empty((len(X), len(HORIZONS_S), 3))
        for s in range(0, len(X), _PREDICT_CHUNK):
            out[s : s + _PREDICT_CHUNK] = predict_batch(predictor, X[s : s + _PREDICT_CHUNK], model)[0]
        start = 0
        for v, f in zip(owners, feats_all):
            preds[v] = out[start : start + len(f)]
            start += len(f)

    tables = []
    for v, (traj, (mf, st)) in enumerate(zip(trajectories, plans)):
        entries = []
        if mf:
            for (f, i), rows in zip(mf, preds[v]):
                entries.append((f, i, rows, False))
        for f, i in st:
            rows = np.repeat([[traj.x_ft[i], traj.y_ft[i], traj.heading_deg[i]]], len(HORIZONS_S), axis=0)
            entries.append((f, i, rows, True))
        entries.sort(key=lambda e: e[0])
        if not entries:
            tables.append(None)
            continue
        idx = np.array([e[1] for e in entries])
        tables.append(
            _VehicleForecasts(
                frames=np.array([e[0] for e in entries]),
                rows=np.stack([e[2] for e in entries]),
                current=np.stack([traj.x_ft[idx], traj.y_ft[idx]], axis=1),
                stationary=np.array([e[3] for e in entries]),
                length=traj.length_ft[idx],
                width=traj.width_ft[idx],
            )
        )
    return tables


def scan_conflicts_modes(
    trajectories: Sequence[Trajectory],
    predictor,
    cadence_frames: int = 1,
    gate_ft: float = 150.0,
    modes: Iterable[str] = MODES,
    cp_radius_ft: float = 3.0,
    speed_eps: float = 0.5,
    model=None,
) -> dict[str, list[PairTimeline]]:
    """Scan every cadence frame for pairwise forecast contacts, per mode.

    Candidate pairs are those within ``gate_ft``; any pair outside the gate
    whose forecasts could still reach each other (sum of the two largest
    forecast excursions plus half-diagonals) is added back and counted in a
    warning, so the gate never hides a conflict.
    """
    modes = tuple(modes)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; choose from {MODES}")
    if cadence_frames < 1 or gate_ft <= 0:
        raise ValueError("cadence_frames must be >= 1 and gate_ft > 0")
    trajectories = [t for t in trajectories if len(t)]
    result: dict[str, dict[tuple[str, str], PairTimeline]] = {m: {} for m in modes}
    if len(trajectories) < 2:
        return {m: [] for m in modes}

    f_lo = min(int(t.frame[0]) for t in trajectories)
    f_hi = max(int(t.frame[-1]) for t in trajectories)
    scan_frames = np.arange(f_lo, f_hi + 1, cadence_frames)
    tables = _build_forecasts(trajectories, predictor, scan_frames, speed_eps, model)
    ids = [t.vehicle_id for t in trajectories]

    # frame -> list of (vehicle index, row in its table)
    by_frame: dict[int, list[tuple[int, int]]] = {}
    for v, tab in enumerate(tables):
        if tab is None:
            continue
        for r, f in enumerate(tab.frames):
            by_frame.setdefault(int(f), []).append((v, r))

    widened = 0
    for f in sorted(by_frame):
        present = by_frame[f]
        if len(present) < 2:
            continue
        vs = np.array([p[0] for p in present])
        cur = np.stack([tables[v].current[r] for v, r in present])
        rows = np.stack([tables[v].rows[r] for v, r in present])
        dims = np.array([[tables[v].length[r], tables[v].width[r]] for v, r in present])
        still = np.array([tables[v].stationary[r] for v, r in present])
        reach = np.hypot(*(rows[..., :2] - cur[:, None, :]).transpose(2, 0, 1)).max(axis=1)
        reach = reach + 0.5 * np.hypot(dims[:, 0], dims[:, 1])

        ia, ib = np.triu_indices(len(present), k=1)
        keep = ~(still[ia] & still[ib])
        ia, ib = ia[keep], ib[keep]
        dist = np.hypot(*(cur[ia] - cur[ib]).T)
        in_gate = dist <= gate_ft
        reachable = dist <= reach[ia] + reach[ib]
        widened += int((reachable & ~in_gate).sum())
        sel = in_gate | reachable
        ia, ib = ia[sel], ib[sel]
        if len(ia) == 0:
            continue
        for mode in modes:
            k = _first_hit(_hits(rows[ia], dims[ia], rows[ib], dims[ib], mode, cp_radius_ft))
            for a, b, kk in zip(ia[k >= 0], ib[k >= 0], k[k >= 0]):
                ida, idb = ids[vs[a]], ids[vs[b]]
                pair = _pair(ida, idb)
                mid = 0.5 * (rows[a, kk, :2] + rows[b, kk, :2])
                tl = result[mode].setdefault(pair, PairTimeline(pair))
                tl.add(ConflictEvent(pair[0], pair[1], f, HORIZONS_S[kk], mode, float(mid[0]), float(mid[1])))
    if widened:
        log.warning("pair gate of %.0f ft widened for %d pair-frames whose forecasts could still meet", gate_ft, widened)
    return {m: [result[m][p] for p in sorted(result[m])] for m in modes}


def scan_conflicts(
    trajectories: Sequence[Trajectory],
    predictor,
    cadence_frames: int = 1,
    gate_ft: float = 150.0,
    mode: str = "bounding_box",
    cp_radius_ft: float = 3.0,
    speed_eps: float = 0.5,
    model=None,
) -> list[PairTimeline]:
    return scan_conflicts_modes(trajectories, predictor, cadence_frames, gate_ft, (mode,), cp_radius_ft, speed_eps, model)[mode]


def aggregate(
    timelines: Iterable[PairTimeline], cadence_frames: int = 1, fps: int = FPS, thresholds=HORIZONS_S
) -> TTCSummary:
    """Total time-exposed TTC and minimum-TTC pair counts per threshold."""
    timelines = list(timelines)
    dt = cadence_frames / fps
    ttcs = [np.array([e.ttc_s for e in tl.events]) for tl in timelines if tl.events]
    mins = np.array([t.min() for t in ttcs]) if ttcs else np.zeros(0)
    allv = np.concatenate(ttcs) if ttcs else np.zeros(0)
    tet = [float((allv <= th).sum() * dt) for th in thresholds]
    counts = [int((mins <= th).sum()) for th in thresholds]
    return TTCSummary(tuple(thresholds), tet, counts)


def min_ttc_events(timelines: Iterable[PairTimeline], threshold: float = 3.0) -> list[ConflictEvent]:
    """One event per pair: its minimum-TTC detection, if within ``threshold``."""
    out = []
    for tl in timelines:
        if tl.events and tl.min_ttc <= threshold:
            out.append(tl.min_event())
    return out


@dataclass
class Heatmap:
    counts: np.ndarray  # (ny, nx), row 0 at y_min
    x_min: float
    y_min: float
    cell_ft: float
    clamped: int


def heatmap(events: Iterable[ConflictEvent], cell_ft: float, extent: tuple[float, float, float, float]) -> Heatmap:
    """Count event locations per square cell over ``extent`` = (x_min, x_max, y_min, y_max).

    Events outside the extent land in the nearest border cell and are counted
    in ``clamped``.
    """
    if cell_ft <= 0:
        raise ValueError("cell_ft must be positive")
    x0, x1, y0, y1 = extent
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"empty extent {extent}")
    nx = max(1, int(np.ceil((x1 - x0) / cell_ft)))
    ny = max(1, int(np.ceil((y1 - y0) / cell_ft)))
    grid = np.zeros((ny, nx), dtype=np.int64)
    clamped = 0
    for e in events:
        ix = int(np.floor((e.x_ft - x0) / cell_ft))
        iy = int(np.floor((e.y_ft - y0) / cell_ft))
        cx, cy = min(max(ix, 0), nx - 1), min(max(iy, 0), ny - 1)
        if (cx, cy) != (ix, iy):
            clamped += 1
        grid[cy, cx] += 1
    if clamped:
        log.warning("%d conflict locations outside the heatmap extent were clamped to border cells", clamped)
    return Heatmap(grid, float(x0), float(y0), float(cell_ft), clamped)


def scene_extent(trajectories: Iterable[Trajectory], margin_ft: float = 10.0) -> tuple[float, float, float, float]:
    xs, ys = [], []
    for t in trajectories:
        if len(t):
            xs += [t.x_ft.min(), t.x_ft.max()]
            ys += [t.y_ft.min(), t.y_ft.max()]
    if not xs:
        return (0.0, 1.0, 0.0, 1.0)
    return (min(xs) - margin_ft, max(xs) + margin_ft, min(ys) - margin_ft, max(ys) + margin_ft)


def write_events_csv(timelines: Iterable[PairTimeline], path) -> None:
    events = sorted(
        (e for tl in timelines for e in tl.events), key=lambda e: (e.vehicle_a, e.vehicle_b, e.frame, e.mode)
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([e.vehicle_a, e.vehicle_b, e.frame, e.ttc_s, e.mode, repr(e.x_ft), repr(e.y_ft)])


def read_events_csv(path) -> list[PairTimeline]:
    timelines: dict[tuple[str, str, str], PairTimeline] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            e = ConflictEvent(r["vehicle_a"], r["vehicle_b"], int(r["frame"]), float(r["ttc_s"]), r["mode"], float(r["x_ft"]), float(r["y_ft"]))
            timelines.setdefault((e.mode, e.vehicle_a, e.vehicle_b), PairTimeline((e.vehicle_a, e.vehicle_b))).add(e)
    return [timelines[k] for k in sorted(timelines)]


def write_heatmap(hm: Heatmap, path, threshold: float, mode: str, cp_radius_ft: float | None = None) -> None:
    """CSV matrix (first row = lowest y band) plus a JSON sidecar next to it."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in hm.counts:
            w.writerow([int(v) for v in row])
    side = {
        "origin_ft": [hm.x_min, hm.y_min],
        "cell_ft": hm.cell_ft,
        "shape": list(hm.counts.shape),
        "threshold_s": threshold,
        "mode": mode,
        "clamped": hm.clamped,
        "row_order": "row 0 is the lowest y band, column 0 the lowest x band",
    }
    if cp_radius_ft is not None:
        side["cp_radius_ft"] = cp_radius_ft
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
