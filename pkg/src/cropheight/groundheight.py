"""Local ground planes and plant heights for each plot."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import as_cloud, concat
from .errors import (
    AmbiguousPlaneError,
    CropHeightError,
    DegenerateInputError,
    DegeneratePlotError,
    NoGroundFoundError,
)
from .plotdetect import PlotGrid, extract_plot_indices

CSV_HEADER = ["plot_row", "plot_col", "center_x", "center_y", "n_points", "est_height_m", "method", "degenerate_flag"]


@dataclass(frozen=True)
class PlaneModel:
    centroid: tuple[float, float, float]
    normal: tuple[float, float, float]

    @classmethod
    def from_arrays(cls, centroid, normal) -> "PlaneModel":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        if n[2] < 0:
            n = -n
        return cls(tuple(float(v) for v in centroid), tuple(float(v) for v in n))

    def distance(self, points) -> np.ndarray:
        return point_plane_heights(points, self)


@dataclass(frozen=True)
class RansacParams:
    dist_threshold: float = 0.05
    max_iters: int = 1000
    min_inliers: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.dist_threshold > 0:
            raise ValueError("dist_threshold must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class PlaneFitResult:
    plane: PlaneModel
    inlier_indices: np.ndarray
    outlier_indices: np.ndarray
    candidate: PlaneModel
    candidate_counts: np.ndarray = field(repr=False, default=None)


def lsq_plane(points) -> PlaneModel:
    """Total least-squares plane: centroid plus the smallest-variance direction."""
    pts = as_cloud(points)
    if len(pts) < 3:
        raise DegenerateInputError("a plane needs at least 3 points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 0 or evals[1] - evals[0] <= 1e-12 * evals[2]:
        raise AmbiguousPlaneError("points are collinear or coincident; plane is undefined")
    return PlaneModel.from_arrays(centroid, evecs[:, 0])


def point_plane_heights(points, plane: PlaneModel) -> np.ndarray:
    pts = as_cloud(points)
    return (pts - np.asarray(plane.centroid)) @ np.asarray(plane.normal)


def sample_triples(n: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """``iters`` uniformly random triples of distinct indices below ``n``."""
    a = rng.integers(0, n, size=iters)
    b = rng.integers(0, n - 1, size=iters)
    c = rng.integers(0, n - 2, size=iters)
    b = b + (b >= a)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.ascontiguousarray(np.column_stack([a, b, c]), dtype=np.int64)


def ransac_plane(cloud, params: RansacParams) -> PlaneFitResult:
    pts = np.ascontiguousarray(as_cloud(cloud))
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"RANSAC needs at least 3 points, got {n}")
    rng = np.random.default_rng(params.seed)
    samples = sample_triples(n, params.max_iters, rng)
    counts = kernels.ransac_counts(pts, samples, params.dist_threshold)
    best = int(np.argmax(counts))
    if counts[best] < 0:
        raise DegenerateInputError("every sampled triple was collinear")
    if counts[best] < params.min_inliers:
        raise NoGroundFoundError(f"best plane has {counts[best]} inliers, need {params.min_inliers}")

    i0, i1, i2 = samples[best]
    x0, y0, z0 = pts[i0]
    ax, ay, az = pts[i1] - pts[i0]
    bx, by, bz = pts[i2] - pts[i0]
    nx = ay * bz - az * by
    ny = az * bx - ax * bz
    nz = ax * by - ay * bx
    lim = params.dist_threshold * math.sqrt(nx * nx + ny * ny + nz * nz)
    d = nx * (pts[:, 0] - x0) + ny * (pts[:, 1] - y0) + nz * (pts[:, 2] - z0)
    inlier = np.abs(d) <= lim
    inliers = np.flatnonzero(inlier)
    candidate = PlaneModel.from_arrays(pts[i0], (nx, ny, nz))
    try:
        plane = lsq_plane(pts[inliers])
    except AmbiguousPlaneError:
        plane = candidate
    return PlaneFitResult(plane, inliers, np.flatnonzero(~inlier), candidate, counts)


def plot_height(heights, method: str = "max", percentile: float = 99.0) -> float:
    """Plot height from point heights: the maximum, or a nearest-rank percentile."""
    h = np.asarray(heights, dtype=np.float64).reshape(-1)
    if len(h) == 0:
        raise DegeneratePlotError("no points above the ground plane")
    if method == "max":
        return float(h.max())
    if method == "percentile":
        if not 0 < percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")
        rank = max(1, math.ceil(percentile / 100.0 * len(h)))
        return float(np.sort(h)[rank - 1])
    raise ValueError(f"unknown height method {method!r}")


def method_tag(method: str, percentile: float = 99.0) -> str:
    if method == "max":
        return "max"
    return f"percentile-{percentile:g}"


@dataclass
class PlotHeight:
    row: int
    col: int
    center: tuple[float, float]
    n_points: int
    height: float
    method: str
    degenerate: bool
    plane: PlaneModel | None = None
    n_inliers: int = 0
    reason: str = ""


@dataclass
class HeightReport:
    plots: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in self.plots:
            w.writerow(
                [
                    p.row,
                    p.col,
                    f"{p.center[0]:.6f}",
                    f"{p.center[1]:.6f}",
                    p.n_points,
                    "nan" if p.degenerate else f"{p.height:.6f}",
                    p.method,
                    int(p.degenerate),
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "HeightReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and list(rows[0].keys()) != CSV_HEADER:
            raise CropHeightError(f"heights CSV header must be {','.join(CSV_HEADER)}")
        plots = [
            PlotHeight(
                row=int(r["plot_row"]),
                col=int(r["plot_col"]),
                center=(float(r["center_x"]), float(r["center_y"])),
                n_points=int(r["n_points"]),
                height=float(r["est_height_m"]),
                method=r["method"],
                degenerate=bool(int(r["degenerate_flag"])),
            )
            for r in rows
        ]
        return cls(plots)


def default_min_inliers(n_points: int) -> int:
    return max(50, int(math.ceil(0.05 * n_points)))


def estimate_single_plot(points, ransac: RansacParams, method: str, percentile: float,
                         row: int, col: int, center) -> PlotHeight:
    tag = method_tag(method, percentile)
    pts = as_cloud(points)
    base = dict(row=row, col=col, center=(float(center[0]), float(center[1])), n_points=len(pts), method=tag)
    try:
        fit = ransac_plane(pts, ransac)
        heights = point_plane_heights(pts[fit.outlier_indices], fit.plane)
        h = plot_height(heights, method, percentile)
    except CropHeightError as exc:
        return PlotHeight(height=math.nan, degenerate=True, reason=str(exc), **base)
    if h < 0:
        return PlotHeight(height=h, degenerate=True, plane=fit.plane, n_inliers=len(fit.inlier_indices),
                          reason="negative height", **base)
    return PlotHeight(height=h, degenerate=False, plane=fit.plane, n_inliers=len(fit.inlier_indices), **base)


def estimate_plot_heights(voxel_map, raw_map, grid: PlotGrid, ransac: RansacParams, extension: float,
                          method: str = "percentile", percentile: float = 99.0,
                          min_inliers: int | None = None, workers: int = 1) -> HeightReport:
    """Per-plot ground plane and height.

    Each plot gathers its length-extended box from the voxel map and from the
    raw map (voxel points first), fits RANSAC with a per-plot seed
    ``ransac.seed ^ plot_index`` and reports the height of the non-ground
    points. ``min_inliers=None`` uses ``max(50, 5% of the plot's points)``;
    otherwise ``ransac.min_inliers`` is overridden by the given value.
    """
    vox = as_cloud(voxel_map)
    raw = as_cloud(raw_map) if raw_map is not None else np.empty((0, 3))
    vox_idx = extract_plot_indices(vox, grid, extension)
    raw_idx = extract_plot_indices(raw, grid, extension) if len(raw) else [np.empty(0, np.int64)] * len(vox_idx)

    def one(item):
        k, (r, c) = item
        pts = concat([vox[vox_idx[k]], raw[raw_idx[k]]])
        need = default_min_inliers(len(pts)) if min_inliers is None else min_inliers
        params = RansacParams(ransac.dist_threshold, ransac.max_iters, need, ransac.seed ^ k)
        return estimate_single_plot(pts, params, method, percentile, r, c, grid.center(r, c))

    items = list(enumerate(grid.cell_ids()))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            plots = list(ex.map(one, items))
    else:
        plots = [one(it) for it in items]
    return HeightReport(plots)
