import json

import numpy as np
import pytest

from cropheight.cli import build_parser, main
from cropheight.plyio import read_ply

SMALL = {
    "farm_size": 10.0,
    "farm_vertices": 12,
    "plants_per_plot": 25,
    "rows": 1,
    "plots_per_row": 3,
    "flight_altitude": 8.0,
    "flight_line_spacing": 5.0,
    "flight_sample_spacing": 2.5,
    "sensor_azimuth_step_deg": 0.5,
    "grid_anchor": [3.1, 4.9],
    "grid_pitch_x": 2.0,
    "grid_pitch_y": 4.0,
    "grid_rows": 1,
    "grid_cols": 3,
    "snap": True,
}


def run_pipeline(d, extra=()):
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    c = ["--config", str(cfg), *extra]
    steps = [
        ["gen-farm", "--out", str(d / "farm.json")],
        ["sim-scan", "--manifest", str(d / "farm.json"), "--out-dir", str(d / "scans")],
        ["build-map", "--scan-dir", str(d / "scans"), "--trajectory", str(d / "scans" / "trajectory.json"),
         "--out", str(d / "map.ply"), "--raw-out", str(d / "raw.ply")],
        ["detect-plots", "--map", str(d / "map.ply"), "--out", str(d / "grid.json"),
         "--diagnostics", str(d / "diag.json")],
        ["estimate-heights", "--voxel", str(d / "map.ply"), "--raw", str(d / "raw.ply"), "--grid",
         str(d / "grid.json"), "--out", str(d / "heights.csv")],
        ["evaluate", "--heights", str(d / "heights.csv"), "--truth", str(d / "farm.json"), "--out-prefix",
         str(d / "eval")],
    ]
    for s in steps:
        assert main(s + c) == 0, s[0]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    run_pipeline(d)
    return d


def test_pipeline_outputs(small_run, capsys):
    d = small_run
    farm = json.loads((d / "farm.json").read_text())
    assert len(farm["ground_truth"]["plots"]) == 3
    traj = json.loads((d / "scans" / "trajectory.json").read_text())
    assert set(traj[0]) == {"t", "tx", "ty", "tz", "qw", "qx", "qy", "qz"}
    assert len(list((d / "scans").glob("scan_*.ply"))) == len(traj)
    assert len(read_ply(d / "map.ply")) < len(read_ply(d / "raw.ply"))
    grid = json.loads((d / "grid.json").read_text())
    assert grid["rows"] == 1 and grid["cols"] == 3
    assert np.allclose(grid["anchor"], [3.0, 5.0], atol=0.25)
    rows = (d / "heights.csv").read_text().splitlines()
    assert len(rows) == 4
    summary = json.loads((d / "eval.json").read_text())["summary"]
    assert summary["n_plots"] == 3
    assert summary["rmse_m"] < 0.08
    assert (d / "eval.svg").read_text().startswith("<svg")
    assert (d / "eval.csv").exists()


def test_evaluate_prints_summary(small_run, capsys):
    d = small_run
    assert main(["evaluate", "--heights", str(d / "heights.csv"), "--truth", str(d / "farm.json"),
                 "--out-prefix", str(d / "again")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == json.loads((d / "eval.json").read_text())["summary"]


def test_field_truth_csv(small_run):
    d = small_run
    farm = json.loads((d / "farm.json").read_text())
    lines = ["plot_row,plot_col,height_m"] + [f"{p['row']},{p['col']},{p['true_height']}"
                                              for p in farm["ground_truth"]["plots"]]
    (d / "field.csv").write_text("\n".join(lines) + "\n")
    assert main(["evaluate", "--heights", str(d / "heights.csv"), "--truth", str(d / "field.csv"),
                 "--out-prefix", str(d / "field")]) == 0
    assert (d / "field.json").read_text() == (d / "eval.json").read_text()


def test_rerun_is_byte_identical(small_run, tmp_path):
    run_pipeline(tmp_path, ["--workers", "3"])
    for name in ["farm.json", "map.ply", "raw.ply", "grid.json", "diag.json", "heights.csv", "eval.json",
                 "eval.csv", "eval.svg", "scans/trajectory.json", "scans/scan_00000.ply"]:
        assert (tmp_path / name).read_bytes() == (small_run / name).read_bytes(), name


def test_flag_overrides_file(small_run, tmp_path):
    d = small_run
    out = tmp_path / "h.csv"
    assert main(["estimate-heights", "--config", str(d / "cfg.json"), "--voxel", str(d / "map.ply"),
                 "--grid", str(d / "grid.json"), "--out", str(out), "--height-method", "max"]) == 0
    assert ",max," in out.read_text()


def test_bool_flag_forms():
    p = build_parser()
    assert p.parse_args(["detect-plots", "--map", "m", "--out", "o", "--snap"]).cfg_snap is True
    assert p.parse_args(["detect-plots", "--map", "m", "--out", "o", "--snap", "false"]).cfg_snap is False


def test_bad_config_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    assert main(["gen-farm", "--config", str(cfg), "--out", str(tmp_path / "f.json")]) == 1
    assert "not_a_key" in capsys.readouterr().err


def test_missing_scan_file(small_run, tmp_path, capsys):
    d = small_run
    (tmp_path / "scans").mkdir()
    traj = d / "scans" / "trajectory.json"
    assert main(["build-map", "--scan-dir", str(tmp_path / "scans"), "--trajectory", str(traj),
                 "--out", str(tmp_path / "m.ply")]) == 1
    assert "missing" in capsys.readouterr().err


def test_missing_grid_layout(small_run, tmp_path, capsys):
    assert main(["detect-plots", "--map", str(small_run / "map.ply"), "--out", str(tmp_path / "g.json")]) == 1
    assert "grid_anchor" in capsys.readouterr().err


def test_unmatched_truth(small_run, tmp_path, capsys):
    (tmp_path / "t.csv").write_text("plot_row,plot_col,height_m\n0,0,0.8\n")
    assert main(["evaluate", "--heights", str(small_run / "heights.csv"), "--truth", str(tmp_path / "t.csv"),
                 "--out-prefix", str(tmp_path / "e")]) == 1
    assert "(0, 1)" in capsys.readouterr().err
