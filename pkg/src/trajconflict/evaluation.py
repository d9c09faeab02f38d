"""Per-horizon error metrics and side-by-side predictor comparison."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import HORIZONS_S
from .data import SequenceSample, stack_samples
from .geometry import angle_diff_deg
from .predictors import predict_batch

REPORT_COLUMNS = ["predictor", "horizon_s", "pos_mae_ft", "pos_rmse_ft", "head_mae_deg", "head_rmse_deg"]


def _mae_rmse(err: np.ndarray) -> tuple[float, float]:
    if err.size == 0:
        raise ValueError("no samples to score")
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def position_errors(preds, targets) -> tuple[float, float]:
    """MAE and RMSE of the Euclidean displacement between (N, 2+) rows."""
    p = np.atleast_2d(np.asarray(preds, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if p.shape[0] != t.shape[0]:
        raise ValueError(f"prediction/target counts differ: {p.shape[0]} vs {t.shape[0]}")
    return _mae_rmse(np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1]))


def heading_errors(preds, targets) -> tuple[float, float]:
    """MAE and RMSE of the minimal circular heading difference (degrees)."""
    p = np.atleast_1d(np.asarray(preds, dtype=float))
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    if p.shape != t.shape:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {t.shape}")
    return _mae_rmse(angle_diff_deg(p, t))


def ade(mae_per_horizon) -> float:
    """Mean position MAE over the six forecast horizons."""
    v = np.asarray(mae_per_horizon, dtype=float)
    if v.shape != (len(HORIZONS_S),):
        raise ValueError(f"expected {len(HORIZONS_S)} horizon values, got {v.shape}")
    return float(v.mean())


@dataclass
class HorizonRow:
    horizon_s: float
    pos_mae_ft: float
    pos_rmse_ft: float
    head_mae_deg: float
    head_rmse_deg: float


@dataclass
class EvalReport:
    predictors: list[str]
    rows: dict[str, list[HorizonRow]]
    ade_ft: dict[str, float]
    n_samples: int
    fingerprint: str = ""
    fallback_rate: dict[str, float] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for name in self.predictors:
                for r in self.rows[name]:
                    w.writerow([name, r.horizon_s, f"{r.pos_mae_ft:.6f}", f"{r.pos_rmse_ft:.6f}", f"{r.head_mae_deg:.6f}", f"{r.head_rmse_deg:.6f}"])
                w.writerow([name, "ADE", f"{self.ade_ft[name]:.6f}", "", "", ""])

    def to_text(self) -> str:
        """Aligned table: one row per horizon, MAE/RMSE cells per predictor."""
        names = self.predictors
        pair = lambda a, b: f"{a:.3f}/{b:.3f}"
        rows = [r for n in names for r in self.rows[n]]
        longest = max(max(len(pair(r.pos_mae_ft, r.pos_rmse_ft)), len(pair(r.head_mae_deg, r.head_rmse_deg))) for r in rows)
        width = max(13, longest, *(len(n) for n in names))
        cell = lambda a, b: pair(a, b).rjust(width)
        head = "Horizon (s)".ljust(12)
        head += " | " + " ".join(n.rjust(width) for n in names)
        head += " | " + " ".join(n.rjust(width) for n in names)
        lines = [
            f"{'':12} | {'Position (ft) MAE/RMSE':^{(width + 1) * len(names) - 1}} | {'Heading (deg) MAE/RMSE':^{(width + 1) * len(names) - 1}}",
            head,
            "-" * len(head),
        ]
        for k, h in enumerate(HORIZONS_S):
            pos = " ".join(cell(self.rows[n][k].pos_mae_ft, self.rows[n][k].pos_rmse_ft) for n in names)
            hdg = " ".join(cell(self.rows[n][k].head_mae_deg, self.rows[n][k].head_rmse_deg) for n in names)
            lines.append(f"{h:<12} | {pos} | {hdg}")
        lines.append("-" * len(head))
        lines.append(f"{'ADE (ft)':<12} | " + " ".join(f"{self.ade_ft[n]:.3f}".rjust(width) for n in names))
        lines.append(f"samples: {self.n_samples}")
        return "\n".join(lines) + "\n"


def config_fingerprint(config) -> str:
    raw = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:16]


def score_predictions(preds: np.ndarray, targets: np.ndarray) -> list[HorizonRow]:
    rows = []
    for k, h in enumerate(HORIZONS_S):
        pm, pr = position_errors(preds[:, k, :2], targets[:, k, :2])
        hm, hr = heading_errors(preds[:, k, 2], targets[:, k, 2])
        rows.append(HorizonRow(h, pm, pr, hm, hr))
    return rows


def compare_predictors(test: list[SequenceSample], predictors: dict, config=None) -> EvalReport:
    """Score every predictor on the same test samples, in registration order."""
    if not test:
        raise ValueError("empty test set")
    X, Y = stack_samples(test)
    rows, ades, fb_rate = {}, {}, {}
    for name, p in predictors.items():
        preds, fb = predict_batch(p, X)
        rows[name] = score_predictions(preds, Y)
        ades[name] = ade([r.pos_mae_ft for r in rows[name]])
        fb_rate[name] = float(np.mean(fb))
    return EvalReport(list(predictors), rows, ades, len(test), config_fingerprint(config or {}), fb_rate)
