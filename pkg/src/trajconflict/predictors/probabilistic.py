"""Discrete conditional-frequency trajectory model.

The state at the last observed step is quantized into a key: 3 ft position
cells plus speed and heading centile bins learned from the training set.
For every key and horizon the model stores the empirical distribution of the
quantized future state; a prediction is the probability-weighted mean of the
outcome bins' representative values.  Unseen keys fall back to constant
velocity.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .. import HORIZONS_S
from ..errors import FitError
from ..geometry import normalize_heading
from .constant_velocity import constant_velocity_rows

Key = tuple[int, int, int, int]
Outcome = tuple[int, int, int]

TABLE_COLUMNS = [
    "x_bin",
    "y_bin",
    "speed_centile",
    "heading_centile",
    "horizon_s",
    "out_x_bin",
    "out_y_bin",
    "out_heading_centile",
    "rep_x_ft",
    "rep_y_ft",
    "rep_heading_deg",
    "probability",
    "count",
]


@dataclass
class HorizonDistribution:
    outcomes: list[Outcome]
    counts: np.ndarray
    probs: np.ndarray
    values: np.ndarray  # (P, 3) representative x, y, heading per outcome


@dataclass
class ProbModel:
    speed_edges: np.ndarray
    heading_edges: np.ndarray
    table: dict[Key, list[HorizonDistribution]] = field(default_factory=dict)
    grid_size_ft: float = 3.0
    name = "probabilistic"

    def cell(self, v):
        return np.floor(np.asarray(v, dtype=float) / self.grid_size_ft).astype(np.int64)

    def speed_bin(self, v):
        return np.searchsorted(self.speed_edges, v, side="right")

    def heading_bin(self, h):
        return np.searchsorted(self.heading_edges, normalize_heading(np.asarray(h, dtype=float)), side="right")

    def keys(self, last_rows: np.ndarray) -> list[Key]:
        r = np.atleast_2d(last_rows)
        cols = zip(self.cell(r[:, 0]), self.cell(r[:, 1]), self.speed_bin(r[:, 2]), self.heading_bin(r[:, 3]))
        return [tuple(int(v) for v in k) for k in cols]

    def outcomes(self, target_rows: np.ndarray) -> list[Outcome]:
        r = np.atleast_2d(target_rows)
        cols = zip(self.cell(r[:, 0]), self.cell(r[:, 1]), self.heading_bin(r[:, 2]))
        return [tuple(int(v) for v in k) for k in cols]

    def predict(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 10, 4) inputs to (N, 6, 3) predictions and a fallback mask."""
        X = np.asarray(inputs, dtype=float)
        out = constant_velocity_rows(X[:, -1])
        fallback = np.ones(len(X), dtype=bool)
        for n, key in enumerate(self.keys(X[:, -1])):
            dists = self.table.get(key)
            if dists is None:
                continue
            fallback[n] = False
            for k, d in enumerate(dists):
                out[n, k] = expected_state(d.probs, d.values)
        return out, fallback

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# grid_size_ft={json.dumps(self.grid_size_ft)}\n")
            fh.write(f"# speed_edges={json.dumps([float(v) for v in self.speed_edges])}\n")
            fh.write(f"# heading_edges={json.dumps([float(v) for v in self.heading_edges])}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for key in sorted(self.table):
                for horizon, d in zip(HORIZONS_S, self.table[key]):
                    for o, cnt, p, val in zip(d.outcomes, d.counts, d.probs, d.values):
                        w.writerow(
                            [*key, horizon, *o, repr(float(val[0])), repr(float(val[1])), repr(float(val[2])), repr(float(p)), int(cnt)]
                        )

    @classmethod
    def load(cls, path) -> "ProbModel":
        meta = {}
        rows = defaultdict(lambda: defaultdict(list))
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                k, v = line[2:].split("=", 1)
                meta[k] = json.loads(v)
            else:
                body.append(line)
        reader = csv.DictReader(body)
        for r in reader:
            key = tuple(int(r[c]) for c in TABLE_COLUMNS[:4])
            rows[key][float(r["horizon_s"])].append(r)
        model = cls(np.array(meta["speed_edges"]), np.array(meta["heading_edges"]), grid_size_ft=float(meta["grid_size_ft"]))
        for key, by_h in rows.items():
            dists = []
            for horizon in HORIZONS_S:
                rs = by_h[horizon]
                dists.append(
                    HorizonDistribution(
                        outcomes=[tuple(int(r[c]) for c in TABLE_COLUMNS[5:8]) for r in rs],
                        counts=np.array([int(r["count"]) for r in rs]),
                        probs=np.array([float(r["probability"]) for r in rs]),
                        values=np.array([[float(r["rep_x_ft"]), float(r["rep_y_ft"]), float(r["rep_heading_deg"])] for r in rs]),
                    )
                )
            model.table[key] = dists
        return model


def expected_state(probs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Weighted mean of x and y; circular weighted mean of heading."""
    x = float(probs @ values[:, 0])
    y = float(probs @ values[:, 1])
    h = np.radians(values[:, 2])
    heading = np.degrees(np.arctan2(probs @ np.sin(h), probs @ np.cos(h)))
    return np.array([x, y, normalize_heading(heading)])


def circular_mean_deg(deg: np.ndarray) -> float:
    h = np.radians(np.asarray(deg, dtype=float))
    return normalize_heading(float(np.degrees(np.arctan2(np.sin(h).mean(), np.cos(h).mean()))))


def centile_edges(values: np.ndarray, n_bins: int = 100) -> np.ndarray:
    """Interior boundaries of ``n_bins`` equal-count bins."""
    return np.quantile(np.asarray(values, dtype=float), np.arange(1, n_bins) / n_bins)


def fit_probabilistic(
    inputs: np.ndarray,
    targets: np.ndarray,
    grid_size_ft: float = 3.0,
    n_speed_bins: int = 100,
    n_heading_bins: int = 100,
) -> ProbModel:
    """Fit from training inputs (N, 10, 4) and targets (N, 6, 3)."""
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if len(X) == 0:
        raise FitError("cannot fit the probabilistic model on an empty training set")
    last = X[:, -1]
    model = ProbModel(
        speed_edges=centile_edges(last[:, 2], n_speed_bins),
        heading_edges=centile_edges(last[:, 3], n_heading_bins),
        grid_size_ft=grid_size_ft,
    )

    # representative value per outcome bin over every training target row
    flat = Y.reshape(-1, 3)
    members: dict[Outcome, list[int]] = defaultdict(list)
    for i, o in enumerate(model.outcomes(flat)):
        members[o].append(i)
    reps = {
        o: np.array([flat[idx, 0].mean(), flat[idx, 1].mean(), circular_mean_deg(flat[idx, 2])])
        for o, idx in members.items()
    }

    counts: dict[Key, list[dict[Outcome, int]]] = {}
    keys = model.keys(last)
    T = Y.shape[1]
    for n, key in enumerate(keys):
        per_h = counts.setdefault(key, [defaultdict(int) for _ in range(T)])
        for k, o in enumerate(model.outcomes(Y[n])):
            per_h[k][o] += 1

    for key, per_h in counts.items():
        dists = []
        for hist in per_h:
            outs = sorted(hist)
            c = np.array([hist[o] for o in outs])
            dists.append(HorizonDistribution(outs, c, c / c.sum(), np.stack([reps[o] for o in outs])))
        model.table[key] = dists
    return model
