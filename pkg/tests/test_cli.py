import json

import numpy as np
import pytest

from stereomot import Track3D
from stereomot.cli import main
from stereomot.config import ConfigError, PipelineConfig
from stereomot.formats import (
    read_annotations_csv,
    read_detections_csv,
    read_tracklets_csv,
    write_detections_csv,
    write_tracks_csv,
)

SMALL = """\
n_fish = 2
duration_s = 2.0
sim.confine_axis_slabs = true
"""


def write_cfg(tmp_path, text=SMALL, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_roundtrip(capsys):
    assert main(["defaults"]) == 0
    text = capsys.readouterr().out
    cfg = PipelineConfig.from_text(text)
    assert cfg.dump() == PipelineConfig.defaults().dump()
    assert PipelineConfig.from_text(cfg.dump()).values == cfg.values


def test_config_rejects_unknown_and_duplicate():
    with pytest.raises(ConfigError, match="<config>:2: unknown"):
        PipelineConfig.from_text("n_fish = 2\nn_fisch = 3\n")
    with pytest.raises(ConfigError, match=":3: duplicate"):
        PipelineConfig.from_text("n_fish = 2\n# note\nn_fish = 4\n")
    with pytest.raises(ConfigError, match="must be int"):
        PipelineConfig.from_text("n_fish = two\n")
    with pytest.raises(ConfigError, match="true or false"):
        PipelineConfig.from_text("sim.confine_axis_slabs = yes\n")
    with pytest.raises(ConfigError, match="expected 'name = value'"):
        PipelineConfig.from_text("just some words\n")


def test_config_comments_and_overrides():
    cfg = PipelineConfig.from_text("fps = 30.0  # halved\n\n# comment\n")
    assert cfg.get("fps") == 30.0
    assert cfg.get("n_fish") == 2  # untouched default
    assert cfg.with_overrides(seed=7).get("seed") == 7
    with pytest.raises(ConfigError, match="unknown"):
        cfg.with_overrides(bogus=1)


def test_euclidean_front_gate_materializes():
    cfg = PipelineConfig.from_text("track2d.front_mode = euclidean-head\n")
    assert cfg.get("track2d.delta_front") == 15.0
    explicit = PipelineConfig.from_text(
        "track2d.front_mode = euclidean-head\ntrack2d.delta_front = 3.0\n")
    assert explicit.get("track2d.delta_front") == 3.0
    # mahalanobis keeps the std-dev default
    assert PipelineConfig.defaults().get("track2d.delta_front") == 0.5


def test_simulate_writes_outputs(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out),
                 "--dump-frames", "2"]) == 0
    assert (out / "calibration.json").is_file()
    gt = read_annotations_csv(out / "annotations.csv")
    assert gt.n_frames == 120 and gt.n_fish == 2
    dets = read_detections_csv(out / "detections.csv")
    assert len(dets) == 120 * 2 * 2  # frames x fish x views
    for view in ("top", "front"):
        for f in range(2):
            assert (out / "frames" / f"{view}_{f:06d}.pgm").is_file()


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b, c = (tmp_path / d for d in ("a", "b", "c"))
    for out, seed in ((a, "1"), (b, "1"), (c, "2")):
        assert main(["simulate", "--config", cfg, "--seed", seed,
                     "--out-dir", str(out)]) == 0
    read = lambda d: (d / "annotations.csv").read_text()
    assert read(a) == read(b)
    assert read(a) != read(c)


def test_pipeline_clean_run_perfect(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", cfg, "--out-dir", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "MOTA" in stdout and "psi" in stdout
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["mota"] == 100.0
    assert report["idsw"] == 0 and report["frag"] == 0
    complexity = json.loads((out / "complexity.json").read_text())
    assert complexity["psi"] == 0.0


def test_pipeline_matches_chained_stages(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    whole = tmp_path / "whole"
    parts = tmp_path / "parts"
    assert main(["pipeline", "--config", cfg, "--out-dir", str(whole)]) == 0
    for argv in (
        ["simulate", "--config", cfg, "--out-dir", str(parts)],
        ["track2d", "--config", cfg, "--out-dir", str(parts),
         "--detections", str(parts / "detections.csv")],
        ["associate", "--config", cfg, "--out-dir", str(parts),
         "--tracklets", str(parts / "tracklets.csv"),
         "--calibration", str(parts / "calibration.json")],
        ["stitch", "--config", cfg, "--out-dir", str(parts),
         "--tracklets3d", str(parts / "tracklets3d.csv")],
        ["evaluate", "--config", cfg, "--out-dir", str(parts),
         "--annotations", str(parts / "annotations.csv"),
         "--tracks", str(parts / "tracks.csv")],
    ):
        assert main(argv) == 0
    capsys.readouterr()
    for name in ("tracklets.csv", "tracklets3d.csv", "tracks.csv",
                 "report.json"):
        assert (whole / name).read_bytes() == (parts / name).read_bytes()


def test_evaluate_annotations_against_themselves(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "gtrun"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    gt = read_annotations_csv(out / "annotations.csv")
    tracks = [Track3D(fish_id=i) for i in gt.fish_ids]
    for (f, i), p in gt.points3d.items():
        tracks[i - 1].points[f] = np.asarray(p)
    write_tracks_csv(out / "gt_tracks.csv", tracks)
    assert main(["evaluate", "--config", cfg, "--out-dir", str(out),
                 "--annotations", str(out / "annotations.csv"),
                 "--tracks", str(out / "gt_tracks.csv")]) == 0
    assert "MOTA" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["mota"] == 100.0
    assert report["motp"] == 0.0
    assert report["id_f1"] == 100.0
    assert report["mt"] == 2


def test_evaluate_2d_tracklets(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run2d"
    assert main(["pipeline", "--config", cfg, "--out-dir", str(out)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--out-dir", str(out),
                 "--annotations", str(out / "annotations.csv"),
                 "--tracklets", str(out / "tracklets.csv"),
                 "--view", "top"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["recall"] == 100.0
    # missing --view is a usage error, not a crash
    assert main(["evaluate", "--config", cfg, "--out-dir", str(out),
                 "--annotations", str(out / "annotations.csv"),
                 "--tracklets", str(out / "tracklets.csv")]) == 2
    assert "error:" in capsys.readouterr().err


def test_detect_external_roundtrip(tmp_path):
    from stereomot.detect import Detection

    raw = tmp_path / "external.csv"
    rows = {"top": {0: [Detection(frame=0, view="top", head=(0.0, 0.0),
                                  candidates=((0.0, 0.0),),
                                  bbox=(10.0, 20.0, 4.0, 6.0),
                                  confidence=99.0),
                        Detection(frame=0, view="top", head=(0.0, 0.0),
                                  candidates=((0.0, 0.0),),
                                  bbox=(50.0, 60.0, 4.0, 6.0),
                                  confidence=10.0)]},
            "front": {}}
    write_detections_csv(raw, rows)
    out = tmp_path / "ingested"
    assert main(["detect", "--external", str(raw),
                 "--out-dir", str(out)]) == 0
    kept = read_detections_csv(out / "detections.csv")
    assert len(kept) == 1  # low-confidence row filtered out
    assert kept[0][1].head == (12.0, 23.0)  # bbox center replaces the head


def test_detect_frames_subcommand(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("n_fish = 2", "n_fish = 1"))
    out = tmp_path / "fromframes"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out),
                 "--dump-frames", "30"]) == 0
    det_out = tmp_path / "redetected"
    assert main(["detect", "--config", cfg, "--out-dir", str(det_out),
                 "--frames-dir", str(out / "frames")]) == 0
    found = read_detections_csv(det_out / "detections.csv")
    by_view = {"top": 0, "front": 0}
    for _, d in found:
        by_view[d.view] += 1
    assert by_view["top"] >= 25 and by_view["front"] >= 25


def test_errors_exit_2(tmp_path, capsys):
    assert main(["track2d", "--detections",
                 str(tmp_path / "missing.csv")]) == 2
    assert capsys.readouterr().err.startswith("error:")
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("whatever = 1\n")
    assert main(["simulate", "--config", str(bad_cfg),
                 "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "error:" in err and "bad.cfg:1" in err


def test_track2d_subcommand_builds_tracklets(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "t2d"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    assert main(["track2d", "--config", cfg, "--out-dir", str(out),
                 "--detections", str(out / "detections.csv")]) == 0
    tracklets = read_tracklets_csv(out / "tracklets.csv")
    assert {t.view for t in tracklets} == {"top", "front"}
    for t in tracklets:
        if t.view == "front":
            assert t.detections[t.frames[0]].cov is not None
