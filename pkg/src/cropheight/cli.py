"""Command-line driver.

Stages, in pipeline order::

    cropheight gen-farm         --out farm.json
    cropheight sim-scan         --manifest farm.json --out-dir scans/
    cropheight build-map        --scan-dir scans/ --trajectory scans/trajectory.json --out map.ply --raw-out raw.ply
    cropheight detect-plots     --map map.ply --out grid.json --snap
    cropheight estimate-heights --voxel map.ply --raw raw.ply --grid grid.json --out heights.csv
    cropheight evaluate         --heights heights.csv --truth farm.json --out-prefix eval

Every subcommand takes ``--config cfg.json``; any config key can also be set
with ``--key-name VALUE`` (flags override the file).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import FIELD_NAMES, PipelineConfig
from .core import RigidPose, crop_box, local_ground_heights, merge_map, voxel_downsample, z_filter, \
    ground_percentile_threshold
from .errors import ConfigError, CropHeightError
from .evaluate import evaluate, truth_from_csv, truth_from_manifest
from .farmgen import farm_from_manifest, farm_to_manifest, generate_farm
from .groundheight import HeightReport, estimate_plot_heights
from .plotdetect import (
    PlotGrid,
    fit_grid,
    kmeans_xy,
    min_area_obb,
    snap_grid_to_clusters,
    vote_dimensions,
)
from .plyio import read_ply, write_ply
from .scansim import Scene, ScanTrajectory, lawnmower_trajectory, simulate_flight

log = logging.getLogger("cropheight")

SCAN_PATTERN = "scan_{:05d}.ply"
_BOOL_FIELDS = {f.name for f in fields(PipelineConfig) if f.type in ("bool", bool)}


def _dump_json(path, doc) -> None:
    with open(path, "w", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> PipelineConfig:
    doc = PipelineConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config) as f:
            try:
                file_doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(file_doc, dict):
            raise ConfigError("config must be a JSON object")
        doc.update(file_doc)
    for name in FIELD_NAMES:
        if hasattr(args, "cfg_" + name):
            doc[name] = getattr(args, "cfg_" + name)
    return PipelineConfig.from_dict(doc)


# -- commands ------------------------------------------------------------------


def cmd_gen_farm(args, cfg: PipelineConfig) -> None:
    farm = generate_farm(cfg.farm_spec())
    _dump_json(args.out, farm_to_manifest(farm))
    log.info("farm: %d triangles, %d plants, %d plots", len(farm.terrain.triangles), len(farm.plants),
             len(farm.truth.plots))


def cmd_sim_scan(args, cfg: PipelineConfig) -> None:
    farm = farm_from_manifest(_load_json(args.manifest))
    scene = Scene.from_farm(farm)
    traj = lawnmower_trajectory(farm.spec.farm_size, cfg.flight_altitude, cfg.flight_line_spacing,
                                cfg.flight_sample_spacing, cfg.flight_speed)
    scans = simulate_flight(traj, cfg.sensor(), scene, workers=cfg.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (cloud, _) in enumerate(scans):
        write_ply(out / SCAN_PATTERN.format(i), cloud)
    reported = ScanTrajectory(traj.times, [pose for _, pose in scans])
    _dump_json(out / "trajectory.json", reported.to_records())
    log.info("simulated %d scans, %d points", len(scans), sum(len(c) for c, _ in scans))


def cmd_build_map(args, cfg: PipelineConfig) -> None:
    traj = ScanTrajectory.from_records(_load_json(args.trajectory))
    scan_dir = Path(args.scan_dir)
    scans = []
    for i, pose in enumerate(traj.poses):
        path = scan_dir / SCAN_PATTERN.format(i)
        if not path.exists():
            raise CropHeightError(f"trajectory has {len(traj)} poses but {path} is missing")
        scans.append((read_ply(path), pose))
    extra = scan_dir / SCAN_PATTERN.format(len(traj))
    if extra.exists():
        raise CropHeightError(f"{extra} has no pose in the trajectory")
    raw = merge_map(scans)
    box = cfg.crop()
    if box is not None:
        raw = crop_box(raw, box)
    vox = voxel_downsample(raw, cfg.voxel())
    write_ply(args.out, vox)
    if args.raw_out:
        write_ply(args.raw_out, raw)
    log.info("map: %d raw points, %d voxels", len(raw), len(vox))


def vegetation_points(vox: np.ndarray, cfg: PipelineConfig):
    """Points kept for clustering, plus the threshold used."""
    if cfg.z_mode == "local":
        above = local_ground_heights(vox, cfg.z_local_cell)
        thr = cfg.z_offset if cfg.z_min is None else cfg.z_min
        return vox[above >= thr], thr
    thr = cfg.z_min if cfg.z_min is not None else ground_percentile_threshold(vox, cfg.z_percentile, cfg.z_offset)
    return z_filter(vox, thr), thr


def detect_plots(vox: np.ndarray, cfg: PipelineConfig, snap: bool | None = None):
    anchor, pitch_x, pitch_y, rows, cols = cfg.grid_layout()
    veg, thr = vegetation_points(vox, cfg)
    clusters = kmeans_xy(veg, cfg.kmeans(rows * cols))
    boxes = [min_area_obb(veg[c.member_indices, :2]) for c in clusters]
    vote = vote_dimensions(boxes, math.radians(cfg.yaw_bin_deg), cfg.dim_bin)
    grid = fit_grid(vote, anchor, pitch_x, pitch_y, rows, cols, math.radians(cfg.grid_yaw_offset_deg))
    if cfg.snap if snap is None else snap:
        grid = snap_grid_to_clusters(grid, clusters)
    diagnostics = {
        "z_threshold": thr,
        "n_vegetation_points": int(len(veg)),
        "vote": vote.__dict__,
        "clusters": [
            {"centroid": list(c.centroid), "n_points": int(len(c.member_indices)), "box": b.to_dict()}
            for c, b in zip(clusters, boxes)
        ],
    }
    return grid, diagnostics


def cmd_detect_plots(args, cfg: PipelineConfig) -> None:
    vox = read_ply(args.map)
    grid, diag = detect_plots(vox, cfg)
    _dump_json(args.out, grid.to_dict())
    if args.diagnostics:
        _dump_json(args.diagnostics, diag)
    v = diag["vote"]
    log.info("grid: yaw %.2f deg, plot %.3f x %.3f m (votes %d/%d/%d of %d)", math.degrees(grid.yaw),
             grid.plot_width, grid.plot_length, v["yaw_votes"], v["width_votes"], v["length_votes"], v["n_boxes"])


def cmd_estimate_heights(args, cfg: PipelineConfig) -> None:
    vox = read_ply(args.voxel)
    raw = read_ply(args.raw) if args.raw else None
    grid = PlotGrid.from_dict(_load_json(args.grid))
    report = estimate_plot_heights(vox, raw, grid, cfg.ransac(), cfg.length_extension, cfg.height_method,
                                   cfg.height_percentile, cfg.ransac_min_inliers, cfg.workers)
    with open(args.out, "w", newline="\n") as f:
        f.write(report.to_csv())
    n_bad = sum(p.degenerate for p in report.plots)
    log.info("heights for %d plots (%d degenerate)", len(report.plots), n_bad)


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    with open(args.heights) as f:
        report = HeightReport.from_csv(f.read())
    with open(args.truth) as f:
        text = f.read()
    truth = truth_from_manifest(json.loads(text)) if args.truth.endswith(".json") else truth_from_csv(text)
    ev = evaluate(report, truth)
    prefix = args.out_prefix
    with open(prefix + ".json", "w", newline="\n") as f:
        f.write(ev.to_json())
    with open(prefix + ".csv", "w", newline="\n") as f:
        f.write(ev.to_csv())
    with open(prefix + ".svg", "w", newline="\n") as f:
        f.write(ev.to_svg())
    s = ev.summary()
    log.info("RMSE %.4f m, mean abs percent error %.2f %% over %d plots", s["rmse_m"], s["mean_abs_percent_error"],
             s["n_plots"])
    print(json.dumps(s, sort_keys=True))


# -- parser --------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    g = p.add_argument_group("config overrides")
    for name in FIELD_NAMES:
        flag = "--" + name.replace("_", "-")
        if name in _BOOL_FIELDS:
            g.add_argument(flag, dest="cfg_" + name, nargs="?", const=True, type=_flag_value,
                           default=argparse.SUPPRESS, metavar="BOOL")
        else:
            g.add_argument(flag, dest="cfg_" + name, type=_flag_value, default=argparse.SUPPRESS, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cropheight", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-farm", help="generate a procedural farm manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_farm)

    p = sub.add_parser("sim-scan", help="fly the simulated LiDAR over a farm")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sim_scan)

    p = sub.add_parser("build-map", help="merge posed scans, crop and voxel-filter")
    p.add_argument("--scan-dir", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out", required=True, help="voxel-filtered map PLY")
    p.add_argument("--raw-out", help="also write the cropped, un-filtered map")
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("detect-plots", help="cluster vegetation and fit the plot grid")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="write clusters and votes here")
    p.set_defaults(func=cmd_detect_plots)

    p = sub.add_parser("estimate-heights", help="per-plot ground plane and plant height")
    p.add_argument("--voxel", required=True)
    p.add_argument("--raw", help="raw map concatenated with the voxel map per plot")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_heights)

    p = sub.add_parser("evaluate", help="compare estimated heights with ground truth")
    p.add_argument("--heights", required=True)
    p.add_argument("--truth", required=True, help="farm manifest JSON or CSV plot_row,plot_col,height_m")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_evaluate)

    for p in sub.choices.values():
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except (CropHeightError, OSError) as exc:
        print(f"cropheight {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
