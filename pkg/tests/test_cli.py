import json
import subprocess
import sys

import pytest

from lineflow.cli import main
from lineflow.config import RunConfig, defaults
from lineflow.exceptions import ConfigError

SPEC = {"width": 160, "height": 120, "noise": {"seed": 3},
        "lines": [{"s": [20, 30], "e": [140, 40]}, {"s": [30, 100], "e": [120, 85]}],
        "motion": {"type": "translation", "steps": [[1, 0.5], [0.5, -0.5], [-1, 0.8]]}}


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("seq")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(root / "spec.json"), str(root / "out")]) == 0
    return root


def test_config_defaults():
    d = defaults()
    assert d["pyramid_scale"] == 1.5 and d["pyramid_height"] == 4
    assert d["grad_threshold"] == 5.0 and d["angle_threshold_deg"] == 22.5
    assert d["half_window"] == 10 and d["convergence_fraction"] == 0.4
    assert d["n_lines"] == 50 and d["threshold"] == 5.0


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# experiment\nhalf_window = 7  # smaller\n\ntwo_step = false\nthreshold=3\n", encoding="utf-8")
    cfg = RunConfig.load(p)
    assert cfg["half_window"] == 7 and cfg["two_step"] is False and cfg["threshold"] == 3.0
    cfg.apply_overrides(["half_window=9"])
    assert cfg["half_window"] == 9
    assert RunConfig().update_from_text(cfg.dumps()) == cfg
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.load(p)
    with pytest.raises(ConfigError):
        RunConfig().update_from_text("half_window: 3")
    with pytest.raises(ConfigError):
        RunConfig().update_from_text("two_step = maybe")


def test_synth_outputs_are_deterministic(seq, tmp_path):
    out = seq / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm", "frame_0003.pgm", "gt.json"]
    assert main(["synth", str(seq / "spec.json"), str(tmp_path / "again")]) == 0
    for n in names:
        assert (out / n).read_bytes() == (tmp_path / "again" / n).read_bytes()


def test_synth_bad_spec_exit_2(tmp_path, capsys):
    bad = dict(SPEC, occluders=[{"rect": [150, 10, 170, 20]}])
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["synth", str(tmp_path / "bad.json"), str(tmp_path / "o")]) == 2
    assert "occluder 0" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert main(["synth", str(tmp_path / "broken.json"), str(tmp_path / "o")]) == 2


def test_synth_io_failure_exit_3(seq, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", str(seq / "spec.json"), str(blocker / "sub")]) == 3


def test_track_and_eval_round_trip(seq, tmp_path, capsys):
    out = seq / "out"
    rep = tmp_path / "r.jsonl"
    assert main(["track", str(out), "--gt-replenish", str(out / "gt.json"), "--out", str(rep)]) == 0
    rep2 = tmp_path / "r2.jsonl"
    assert main(["track", str(out), "--gt-replenish", str(out / "gt.json"), "--out", str(rep2), "--jobs", "2"]) == 0
    assert rep.read_bytes() == rep2.read_bytes()
    capsys.readouterr()
    assert main(["eval", str(rep), str(out / "gt.json"), "--assert", "accuracy>=0.95",
                 "--csv", str(tmp_path / "t.csv")]) == 0
    table = capsys.readouterr().out
    assert "accuracy" in table and "1.0000" in table
    metrics = json.loads((tmp_path / "r.metrics.json").read_text())
    assert metrics["accuracy"] == 1.0 and metrics["tracking_length"] == 4.0
    assert (tmp_path / "t.csv").read_text().startswith("track_id,")
    assert main(["eval", str(rep), str(out / "gt.json"), "--assert", "tracking_length>=30"]) == 1
    assert "measured tracking_length=4" in capsys.readouterr().err
    assert main(["eval", str(rep), str(out / "gt.json"), "--threshold", "0.01", "--json",
                 str(tmp_path / "strict.json")]) == 0
    strict = json.loads((tmp_path / "strict.json").read_text())
    assert strict["accuracy"] <= metrics["accuracy"]


def test_track_options(seq, tmp_path):
    out = seq / "out"
    lines = tmp_path / "lines.json"
    lines.write_text(json.dumps([{"s": [20, 30], "e": [140, 40]}]))
    diag = tmp_path / "diag.jsonl"
    rep = tmp_path / "r.jsonl"
    assert main(["track", str(out), "--lines", str(lines), "--out", str(rep), "--no-refine",
                 "--dump-diagnostics", str(diag), "--set", "half_window=8"]) == 0
    recs = [json.loads(l) for l in rep.read_text().splitlines()]
    assert {r["track_id"] for r in recs} == {0}
    rows = [json.loads(l) for l in diag.read_text().splitlines()]
    assert rows and {"frame", "track_id", "level", "phase", "iter", "cost"} <= set(rows[0])


def test_track_error_exits(seq, tmp_path):
    out = seq / "out"
    empty = tmp_path / "none.json"
    empty.write_text("[]")
    assert main(["track", str(out), "--lines", str(empty), "--out", str(tmp_path / "r")]) == 4
    assert main(["track", str(out), "--lines", str(empty), "--out", str(tmp_path / "r"), "--set", "nope=1"]) == 2
    cfg = tmp_path / "c.cfg"
    cfg.write_text("unknown_key = 3\n")
    assert main(["track", str(out), "--lines", str(empty), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 2
    assert main(["track", str(tmp_path), "--lines", str(empty), "--out", str(tmp_path / "r")]) == 2
    assert main(["track", str(out), "--out", str(tmp_path / "r")]) == 2


def test_rotation_priors(tmp_path):
    spec = {"width": 240, "height": 180, "noise": {"seed": 5}, "lines": [{"s": [60, 50], "e": [180, 60]}],
            "motion": {"type": "rotation", "intrinsics": {"fx": 250, "fy": 250, "cx": 120, "cy": 90},
                       "axis": [0, 1, 0], "degrees_per_frame": 0.5, "frames": 3}}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "o")]) == 0
    gt = tmp_path / "o" / "gt.json"
    assert main(["track", str(tmp_path / "o"), "--gt-replenish", str(gt), "--rotation-priors", str(gt),
                 "--out", str(tmp_path / "r.jsonl")]) == 0
    assert main(["eval", str(tmp_path / "r.jsonl"), str(gt), "--assert", "accuracy>=1"]) == 0


def test_eval_frame_mismatch_exit_5(seq, tmp_path):
    rep = tmp_path / "r.jsonl"
    rep.write_text(json.dumps({"frame": 99, "track_id": 0, "status": "live", "s": [1, 1], "e": [9, 9],
                               "n_points_tracked": 3, "iterations": 1}) + "\n")
    assert main(["eval", str(rep), str(seq / "out" / "gt.json")]) == 5
    rep.write_text("{not json\n")
    assert main(["eval", str(rep), str(seq / "out" / "gt.json")]) == 2


def test_help_lists_config_keys():
    for sub in ("synth", "track", "eval"):
        res = subprocess.run([sys.executable, "-m", "lineflow", sub, "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        for key, val in defaults().items():
            assert f"{key} = {val}" in res.stdout
