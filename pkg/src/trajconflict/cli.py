"""Command-line pipeline: synth, ingest, train, evaluate, conflicts.

Stages talk through files in ``output_dir``:

    trajectories.csv   synth / ingest     per-frame waypoints (default column layout)
    samples.csv        ingest             one windowed sample per row
    split.json         train              train/test vehicle ids
    model.lstm         train              encoder-decoder parameters
    prob_model.csv     train              probabilistic model table
    history.csv        train              per-epoch losses and step size
    report.csv/.txt    evaluate           per-horizon comparison
    events.csv         conflicts          TTC detections, both geometry modes
    ttc_summary.csv    conflicts          TET and minTTC counts per threshold
    heatmap_*.csv      conflicts          minTTC location grids (+ .json sidecar)

Every command also writes ``<command>.resolved.yaml``; passing that file back
through ``--config`` reproduces the run.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import HORIZONS_S, __version__
from .conflicts import MODES, aggregate, heatmap, min_ttc_events, scan_conflicts_modes, scene_extent, write_events_csv, write_heatmap
from .data import (
    IN_STEPS,
    OUT_STEPS,
    STRIDE_FRAMES,
    ColumnMapping,
    build_samples,
    ingest_csv,
    read_samples_csv,
    split_dataset,
    stack_samples,
    waypoint_counts,
    write_samples_csv,
    write_trajectories_csv,
)
from .errors import ConfigError, DataError, TrajConflictError
from .evaluation import compare_predictors
from .predictors import (
    SELECTORS,
    ProbModel,
    Seq2SeqPredictor,
    TrainConfig,
    fit_probabilistic,
    load_params,
    make_predictor,
    save_params,
    train_seq2seq,
)
from .synthetic import IntersectionSpec, generate_synthetic

log = logging.getLogger("trajconflict")

DEFAULTS = {
    "output_dir": "out",
    "data": {
        "csv": None,
        "mapping": asdict(ColumnMapping()),
        "synthetic": {"n_vehicles": 420, "noise_std": 0.2, "seed": 0, "spec": {}},
    },
    "filter": {"speed_eps_mph": 0.5, "min_run_steps": IN_STEPS + OUT_STEPS},
    "window": {"in_steps": IN_STEPS, "out_steps": OUT_STEPS, "stride_frames": STRIDE_FRAMES},
    "split": {"test_fraction": 0.30, "seed": 0},
    "probabilistic": {"grid_size_ft": 3.0, "speed_bins": 100, "heading_bins": 100},
    "train": asdict(TrainConfig()),
    "evaluate": {"predictors": list(SELECTORS)},
    "conflicts": {
        "predictor": "seq2seq",
        "modes": list(MODES),
        "cadence_frames": 1,
        "gate_ft": 150.0,
        "cp_radius_ft": 3.0,
        "thresholds": list(HORIZONS_S),
        "heatmap_cell_ft": 10.0,
        "heatmap_thresholds": [3.0, 2.0],
    },
}

# sections whose keys are free-form
_OPEN = {("data", "synthetic", "spec"), ("data", "mapping")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _merge(base: dict, override: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base and path not in _OPEN:
            raise ConfigError(f"unknown config key {'.'.join(path + (k,))}")
        if isinstance(v, dict) and isinstance(base.get(k), dict) and path + (k,) not in _OPEN:
            out[k] = _merge(base[k], v, path + (k,))
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = DEFAULTS
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    w = cfg["window"]
    if (w["in_steps"], w["out_steps"], w["stride_frames"]) != (IN_STEPS, OUT_STEPS, STRIDE_FRAMES):
        raise ConfigError(f"window must be {IN_STEPS} in / {OUT_STEPS} out steps every {STRIDE_FRAMES} frames")
    if cfg["filter"]["speed_eps_mph"] < 0 or cfg["filter"]["min_run_steps"] < 1:
        raise ConfigError("filter.speed_eps_mph must be >= 0 and filter.min_run_steps >= 1")
    if not 0 < cfg["split"]["test_fraction"] < 1:
        raise ConfigError("split.test_fraction must be in (0, 1)")
    TrainConfig.from_dict(cfg["train"]).validate()
    try:
        ColumnMapping.from_dict(cfg["data"]["mapping"])
        IntersectionSpec.from_dict(cfg["data"]["synthetic"]["spec"]).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for p in cfg["evaluate"]["predictors"]:
        if p not in SELECTORS + ("oracle",):
            raise ConfigError(f"unknown predictor {p!r}")
    c = cfg["conflicts"]
    if c["predictor"] not in SELECTORS:
        raise ConfigError(f"unknown conflict predictor {c['predictor']!r}")
    if any(m not in MODES for m in c["modes"]):
        raise ConfigError(f"conflicts.modes must be drawn from {MODES}")
    if c["cadence_frames"] < 1 or c["gate_ft"] <= 0 or c["cp_radius_ft"] <= 0 or c["heatmap_cell_ft"] <= 0:
        raise ConfigError("conflicts: cadence_frames >= 1, gate_ft, cp_radius_ft and heatmap_cell_ft > 0")
    if any(t not in HORIZONS_S for t in c["thresholds"]):
        raise ConfigError(f"conflicts.thresholds must be drawn from {HORIZONS_S}")


def _outdir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg, command):
    path = _outdir(cfg) / f"{command}.resolved.yaml"
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def _load_trajectories(cfg):
    src = cfg["data"]
    if src["csv"]:
        return ingest_csv(src["csv"], ColumnMapping.from_dict(src["mapping"]))
    path = Path(cfg["output_dir"]) / "trajectories.csv"
    if path.exists():
        return ingest_csv(path)
    return _synthesize(cfg)


def _synthesize(cfg):
    syn = cfg["data"]["synthetic"]
    spec = IntersectionSpec.from_dict(syn["spec"])
    return generate_synthetic(spec, int(syn["n_vehicles"]), float(syn["noise_std"]), int(syn["seed"]))


def cmd_synth(cfg) -> int:
    trajs = _synthesize(cfg)
    path = _outdir(cfg) / "trajectories.csv"
    write_trajectories_csv(trajs, path)
    _write_resolved(cfg, "synth")
    print(f"wrote {len(trajs)} trajectories ({sum(len(t) for t in trajs)} waypoints) to {path}")
    return 0


def cmd_ingest(cfg) -> int:
    out = _outdir(cfg)
    if cfg["data"]["csv"]:
        trajs = ingest_csv(cfg["data"]["csv"], ColumnMapping.from_dict(cfg["data"]["mapping"]))
    else:
        trajs = _synthesize(cfg)
        write_trajectories_csv(trajs, out / "trajectories.csv")
    eps = cfg["filter"]["speed_eps_mph"]
    samples = build_samples(trajs, eps, cfg["filter"]["min_run_steps"])
    write_samples_csv(samples, out / "samples.csv")
    stationary, moving = waypoint_counts(trajs, eps)
    total = stationary + moving
    stats = {
        "vehicles": len(trajs),
        "waypoints": total,
        "stationary_waypoints": stationary,
        "moving_waypoints": moving,
        "stationary_ratio": stationary / total if total else 0.0,
        "moving_ratio": moving / total if total else 0.0,
        "samples": len(samples),
    }
    with open(out / "ingest_stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_resolved(cfg, "ingest")
    print(
        f"{stats['vehicles']} vehicles, {total} waypoints: stationary {stationary} / moving {moving} "
        f"(ratio {stats['stationary_ratio']:.2f}/{stats['moving_ratio']:.2f}); {len(samples)} samples"
    )
    return 0


def _samples_and_split(cfg):
    path = Path(cfg["output_dir"]) / "samples.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run `ingest` first")
    samples = read_samples_csv(path)
    if not samples:
        raise DataError(f"{path} holds no samples")
    return samples, split_dataset(samples, cfg["split"]["test_fraction"], cfg["split"]["seed"])


def _fit_prob(cfg, split):
    p = cfg["probabilistic"]
    X, Y = stack_samples(split.train)
    return fit_probabilistic(X, Y, p["grid_size_ft"], p["speed_bins"], p["heading_bins"])


def cmd_train(cfg) -> int:
    out = _outdir(cfg)
    samples, split = _samples_and_split(cfg)
    with open(out / "split.json", "w", encoding="utf-8") as fh:
        json.dump({"seed": split.seed, "train": sorted(split.train_vehicles), "test": sorted(split.test_vehicles)}, fh, indent=1)
        fh.write("\n")
    _fit_prob(cfg, split).save(out / "prob_model.csv")
    params, history = train_seq2seq(split, TrainConfig.from_dict(cfg["train"]))
    save_params(params, out / "model.lstm")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "learning_rate"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["learning_rate"])])
    _write_resolved(cfg, "train")
    best = min(history, key=lambda h: h["val_loss"])
    print(f"trained {len(history)} epochs on {len(split.train)} samples; best val loss {best['val_loss']:.4f} at epoch {best['epoch']}")
    return 0


class OraclePredictor:
    """Returns the ground-truth target of any known input window."""

    name = "oracle"

    def __init__(self, samples):
        self._truth = {s.input.tobytes(): s.target for s in samples}

    def predict(self, inputs):
        X = np.asarray(inputs, dtype=float)
        return np.stack([self._truth[x.tobytes()] for x in X]), np.zeros(len(X), dtype=bool)


def _load_predictor(cfg, name, samples=None):
    out = Path(cfg["output_dir"])
    if name == "constant_velocity":
        return make_predictor(name)
    if name == "probabilistic":
        path = out / "prob_model.csv"
        if not path.exists():
            raise ConfigError(f"{path} not found; run `train` first")
        return ProbModel.load(path)
    if name == "seq2seq":
        path = out / "model.lstm"
        if not path.exists():
            raise ConfigError(f"{path} not found; run `train` first")
        return Seq2SeqPredictor(load_params(path))
    if name == "oracle":
        return OraclePredictor(samples)
    raise ConfigError(f"unknown predictor {name!r}")


def cmd_evaluate(cfg) -> int:
    out = _outdir(cfg)
    samples, split = _samples_and_split(cfg)
    predictors = {n: _load_predictor(cfg, n, samples) for n in cfg["evaluate"]["predictors"]}
    report = compare_predictors(split.test, predictors, cfg)
    report.to_csv(out / "report.csv")
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    _write_resolved(cfg, "evaluate")
    print(text, end="")
    return 0


def cmd_conflicts(cfg) -> int:
    out = _outdir(cfg)
    c = cfg["conflicts"]
    trajs = _load_trajectories(cfg)
    predictor = _load_predictor(cfg, c["predictor"])
    timelines = scan_conflicts_modes(
        trajs, predictor, c["cadence_frames"], c["gate_ft"], c["modes"], c["cp_radius_ft"], cfg["filter"]["speed_eps_mph"]
    )
    write_events_csv([tl for m in c["modes"] for tl in timelines[m]], out / "events.csv")
    extent = scene_extent(trajs)
    with open(out / "ttc_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "threshold_s", "tet_s", "min_ttc_pairs"])
        for m in c["modes"]:
            s = aggregate(timelines[m], c["cadence_frames"], thresholds=tuple(c["thresholds"]))
            for r in s.rows():
                w.writerow([m, r["threshold_s"], f"{r['tet_s']:.6f}", r["min_ttc_pairs"]])
            print(f"{m}: " + ", ".join(f"<={r['threshold_s']}s: TET {r['tet_s']:.3f}s, {r['min_ttc_pairs']} pairs" for r in s.rows()))
    for m in c["modes"]:
        for thr in c["heatmap_thresholds"]:
            hm = heatmap(min_ttc_events(timelines[m], thr), c["heatmap_cell_ft"], extent)
            write_heatmap(hm, out / f"heatmap_{m}_{thr:.1f}s.csv", thr, m, c["cp_radius_ft"] if m == "center_point" else None)
    _write_resolved(cfg, "conflicts")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "conflicts": cmd_conflicts,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajconflict", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    parser.add_argument("-c", "--config", help="YAML config file")
    parser.add_argument("-o", "--output-dir", help="override output_dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", nargs="?", choices=sorted(COMMANDS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {"output_dir": args.output_dir} if args.output_dir else None
        cfg = load_config(args.config, overrides)
        if args.print_config:
            yaml.safe_dump(cfg, sys.stdout, sort_keys=True)
            return 0
        if args.command is None:
            parser.error("a command is required")
        return COMMANDS[args.command](cfg)
    except TrajConflictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
