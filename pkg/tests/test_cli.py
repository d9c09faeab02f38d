import csv
import json
import shutil

import numpy as np
import pytest
import yaml

from trajconflict.cli import DEFAULTS, load_config, main
from trajconflict.data import write_trajectories_csv
from trajconflict.errors import ConfigError
from oracles import straight_trajectory

STAGES = ["ingest", "train", "evaluate", "conflicts"]


def write_cfg(path, **sections):
    path.write_text(yaml.safe_dump(sections))
    return str(path)


def small_cfg(tmp_path, out="out", **extra):
    cfg = {
        "output_dir": str(tmp_path / out),
        "data": {"synthetic": {"n_vehicles": 30, "seed": 4}},
        "train": {"hidden_size": 6, "max_epochs": 3, "batch_size": 64},
        "conflicts": {"cadence_frames": 15},
    }
    for k, v in extra.items():
        cfg.setdefault(k, {}).update(v) if isinstance(v, dict) else cfg.__setitem__(k, v)
    return write_cfg(tmp_path / f"{out}.yaml", **cfg)


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = small_cfg(tmp)
    for stage in STAGES:
        assert main(["-c", cfg, stage]) == 0, stage
    return tmp, cfg


def test_print_config(capsys):
    assert main(["--print-config"]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown == yaml.safe_load(yaml.safe_dump(DEFAULTS))
    assert shown["conflicts"]["cp_radius_ft"] == 3.0


def test_no_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_bad_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 1


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", train={"hiden_size": 3})
    assert main(["-c", cfg, "--print-config"]) == 1
    assert "hiden_size" in capsys.readouterr().err


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"window": {"in_steps": 12}})
    with pytest.raises(ConfigError):
        load_config(None, {"conflicts": {"modes": ["halo"]}})
    with pytest.raises(ConfigError):
        load_config(None, {"split": {"test_fraction": 0}})


def test_missing_config_file(tmp_path):
    assert main(["-c", str(tmp_path / "none.yaml"), "ingest"]) == 1


def test_train_without_samples(tmp_path, capsys):
    assert main(["-c", small_cfg(tmp_path), "train"]) == 1
    assert "ingest" in capsys.readouterr().err


def test_evaluate_without_model(tmp_path):
    cfg = small_cfg(tmp_path)
    assert main(["-c", cfg, "ingest"]) == 0
    assert main(["-c", cfg, "evaluate"]) == 1


def test_bad_csv_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("frame,vehicle_id,x_ft\n0,a,1\n")
    cfg = write_cfg(tmp_path / "c.yaml", output_dir=str(tmp_path / "o"), data={"csv": str(bad)})
    assert main(["-c", cfg, "ingest"]) == 2
    assert "y_ft" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    cfg = small_cfg(tmp_path, train={"learning_rate": 1e307})
    assert main(["-c", cfg, "ingest"]) == 0
    with np.errstate(all="ignore"):
        assert main(["-c", cfg, "train"]) == 3
    assert "epoch 1" in capsys.readouterr().err


def test_fully_stationary_input(tmp_path, capsys):
    n = 300
    from trajconflict.data import Trajectory

    trajs = [
        Trajectory(v, np.arange(n), np.full(n, x), np.zeros(n), np.zeros(n), np.zeros(n), np.full(n, 15.0), np.full(n, 6.0))
        for v, x in (("a", 0.0), ("b", 30.0))
    ]
    src = tmp_path / "still.csv"
    write_trajectories_csv(trajs, src)
    cfg = write_cfg(tmp_path / "c.yaml", output_dir=str(tmp_path / "o"), data={"csv": str(src)})
    assert main(["-c", cfg, "ingest"]) == 0
    out = capsys.readouterr().out
    assert "ratio 1.00/0.00" in out and "0 samples" in out
    stats = json.loads((tmp_path / "o" / "ingest_stats.json").read_text())
    assert stats["samples"] == 0 and stats["moving_waypoints"] == 0
    assert main(["-c", cfg, "train"]) == 2


def test_ingest_waypoint_count_equals_rows(tmp_path, small_corpus):
    src = tmp_path / "t.csv"
    write_trajectories_csv(small_corpus, src)
    rows = sum(1 for _ in open(src)) - 1
    cfg = write_cfg(tmp_path / "c.yaml", output_dir=str(tmp_path / "o"), data={"csv": str(src)})
    assert main(["-c", cfg, "ingest"]) == 0
    stats = json.loads((tmp_path / "o" / "ingest_stats.json").read_text())
    assert stats["waypoints"] == rows


def test_pipeline_outputs(pipeline):
    tmp, _ = pipeline
    out = tmp / "out"
    for name in ["samples.csv", "split.json", "model.lstm", "prob_model.csv", "history.csv", "report.csv", "report.txt", "events.csv", "ttc_summary.csv"]:
        assert (out / name).exists(), name
    for stage in STAGES:
        assert (out / f"{stage}.resolved.yaml").exists()
    with open(out / "history.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert len(hist) == 3 and set(hist[0]) == {"epoch", "train_loss", "val_loss", "learning_rate"}
    with open(out / "report.csv") as fh:
        rep = list(csv.DictReader(fh))
    for p in ("constant_velocity", "probabilistic", "seq2seq"):
        assert sum(1 for r in rep if r["predictor"] == p and r["horizon_s"] != "ADE") == 6
    with open(out / "ttc_summary.csv") as fh:
        summ = list(csv.DictReader(fh))
    assert len(summ) == 12
    for m in ("bounding_box", "center_point"):
        for t in ("3.0", "2.0"):
            assert (out / f"heatmap_{m}_{t}s.csv").exists()
            assert (out / f"heatmap_{m}_{t}s.csv.json").exists()


def test_cli_reruns_byte_identical(pipeline):
    tmp, cfg = pipeline
    out = tmp / "out"
    before = snapshot(out)
    for stage in STAGES:
        assert main(["-c", cfg, stage]) == 0
    assert snapshot(out) == before


def test_resolved_sidecar_reproduces(pipeline, tmp_path):
    tmp, _ = pipeline
    out = tmp / "out"
    before = snapshot(out)
    copy = tmp_path / "again"
    for stage in STAGES:
        assert main(["-c", str(out / f"{stage}.resolved.yaml"), "-o", str(copy), stage]) == 0
    after = snapshot(copy)
    for name, data in before.items():
        if name.endswith(".resolved.yaml"):
            continue
        assert after[name] == data, name


def test_oracle_evaluate_is_zero(pipeline, tmp_path):
    tmp, _ = pipeline
    out = tmp_path / "o"
    shutil.copytree(tmp / "out", out)
    cfg = write_cfg(tmp_path / "c.yaml", output_dir=str(out), evaluate={"predictors": ["oracle", "constant_velocity"]})
    assert main(["-c", cfg, "evaluate"]) == 0
    with open(out / "report.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["predictor"] == "oracle"]
    assert len(rows) == 7
    for r in rows:
        assert float(r["pos_mae_ft"]) == 0.0
        if r["horizon_s"] != "ADE":
            assert float(r["pos_rmse_ft"]) == 0.0 and float(r["head_mae_deg"]) == 0.0


def _conflict_run(tmp_path, trajs, **conflicts):
    src = tmp_path / "scene.csv"
    write_trajectories_csv(trajs, src)
    c = {"predictor": "constant_velocity", "cadence_frames": 5}
    c.update(conflicts)
    cfg = write_cfg(tmp_path / "c.yaml", output_dir=str(tmp_path / "o"), data={"csv": str(src)}, conflicts=c)
    assert main(["-c", cfg, "conflicts"]) == 0
    with open(tmp_path / "o" / "ttc_summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    events = (tmp_path / "o" / "events.csv").read_text().splitlines()
    return summary, events


def test_single_vehicle_conflicts_empty(tmp_path):
    summary, events = _conflict_run(tmp_path, [straight_trajectory("a", 0, 0, 25, 0, 400)])
    assert events == ["vehicle_a,vehicle_b,frame,ttc_s,mode,x_ft,y_ft"]
    assert all(float(r["tet_s"]) == 0 and int(r["min_ttc_pairs"]) == 0 for r in summary)
    hm = np.loadtxt(tmp_path / "o" / "heatmap_bounding_box_3.0s.csv", delimiter=",")
    assert hm.sum() == 0


def test_scripted_near_miss_one_pair(tmp_path):
    trajs = [
        straight_trajectory("a", 0, 0, 30, 0, 400),
        straight_trajectory("b", 1000, 4.0, 30, 180, 400),
        straight_trajectory("c", 0, 300, 30, 0, 400),
    ]
    summary, _ = _conflict_run(tmp_path, trajs)
    at3 = {r["mode"]: int(r["min_ttc_pairs"]) for r in summary if float(r["threshold_s"]) == 3.0}
    assert at3 == {"bounding_box": 1, "center_point": 0}
    hm = np.loadtxt(tmp_path / "o" / "heatmap_bounding_box_3.0s.csv", delimiter=",")
    assert hm.sum() == 1
    side = json.loads((tmp_path / "o" / "heatmap_center_point_3.0s.csv.json").read_text())
    assert side["cp_radius_ft"] == 3.0 and side["mode"] == "center_point"
