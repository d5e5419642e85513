"""Procedural phenotyping farms: random triangulated terrain plus gridded plots.

Everything is a pure function of the :class:`FarmSpec` (its ``seed``
included), so a farm can be regenerated bit for bit from its manifest.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpecError, OutOfTerrainError
from .plotdetect import OrientedBox, PlotGrid

BARY_TOL = 1e-12


@dataclass(frozen=True)
class FarmSpec:
    farm_size: float = 26.0
    n_vertices: int = 150
    height_range: float = 0.0
    plot_width: float = 1.0
    plot_length: float = 2.5
    gap_x: float = 1.0
    gap_y: float = 1.5
    plants_per_plot: int = 90
    scale_min: float = 0.8
    scale_max: float = 1.2
    rows: int = 3
    plots_per_row: int = 10
    row_offsets: tuple = ()
    nominal_height: float = 0.8
    canopy_radius: float = 0.12
    canopy_aspect: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", tuple(float(v) for v in self.row_offsets))
        for name in ("farm_size", "plot_width", "plot_length", "gap_x", "gap_y",
                     "nominal_height", "canopy_radius", "scale_min", "canopy_aspect"):
            if not getattr(self, name) > 0:
                raise InvalidSpecError(f"{name} must be positive")
        if self.height_range < 0:
            raise InvalidSpecError("height_range must be non-negative")
        if self.n_vertices < 0:
            raise InvalidSpecError("n_vertices must be non-negative")
        if self.scale_min > self.scale_max:
            raise InvalidSpecError("scale_min exceeds scale_max")
        if self.rows < 1 or self.plots_per_row < 1 or self.plants_per_plot < 1:
            raise InvalidSpecError("rows, plots_per_row and plants_per_plot must be >= 1")
        if self.row_offsets and len(self.row_offsets) != self.rows:
            raise InvalidSpecError("row_offsets needs one entry per row")

    @property
    def pitch_x(self) -> float:
        return self.plot_width + self.gap_x

    @property
    def pitch_y(self) -> float:
        return self.plot_length + self.gap_y

    def offsets(self) -> tuple:
        return self.row_offsets or (0.0,) * self.rows

    def layout_origin(self) -> tuple[float, float]:
        """Lower-left corner of plot (0, 0); the un-offset block is centred in the farm."""
        block_w = self.plots_per_row * self.plot_width + (self.plots_per_row - 1) * self.gap_x
        block_l = self.rows * self.plot_length + (self.rows - 1) * self.gap_y
        return (0.5 * (self.farm_size - block_w), 0.5 * (self.farm_size - block_l))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["row_offsets"] = list(self.row_offsets)
        return d


@dataclass
class TerrainMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int, counter-clockwise

    def triangle_coords(self) -> np.ndarray:
        return self.vertices[self.triangles]  # (T, 3, 3)


@dataclass(frozen=True)
class PlantInstance:
    base: tuple[float, float, float]
    scale: float
    yaw: float
    base_radius: float
    nominal_height: float
    aspect: float
    row: int
    col: int

    @property
    def true_height(self) -> float:
        return self.nominal_height * self.scale

    def ellipsoid(self) -> tuple:
        """Canopy proxy ``(cx, cy, cz, rx, ry, rz, cos yaw, sin yaw)``; rests on the base, apex at the true height."""
        h = self.true_height
        r = self.base_radius * self.scale
        bx, by, bz = self.base
        return (bx, by, bz + 0.5 * h, r, self.aspect * r, 0.5 * h, math.cos(self.yaw), math.sin(self.yaw))


@dataclass
class PlotTruth:
    row: int
    col: int
    box: OrientedBox
    plant_heights: list = field(default_factory=list)

    @property
    def true_height(self) -> float:
        return max(self.plant_heights)


@dataclass
class FarmGroundTruth:
    plots: list
    grid: PlotGrid

    def by_id(self) -> dict:
        return {(p.row, p.col): p for p in self.plots}


# -- terrain -------------------------------------------------------------------


def _circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return ux, uy, (ax - ux) ** 2 + (ay - uy) ** 2


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def bowyer_watson(xy: np.ndarray, hull: tuple[int, int, int, int]) -> np.ndarray:
    """Delaunay triangulation of ``xy`` by incremental insertion.

    ``hull`` gives the indices of four points forming a convex quadrilateral
    (counter-clockwise) that contains every other point. Starting from that
    quadrilateral instead of a super-triangle keeps the outer boundary intact.
    """
    pts = [tuple(map(float, p)) for p in xy]
    a, b, c, d = hull
    tris = {}

    def add(i, j, k):
        if _orient(pts[i], pts[j], pts[k]) < 0:
            j, k = k, j
        tris[(i, j, k)] = _circumcircle(pts[i], pts[j], pts[k])

    add(a, b, c)
    add(a, c, d)
    hull_set = set(hull)
    for p in range(len(pts)):
        if p in hull_set:
            continue
        px, py = pts[p]
        bad = [t for t, (ux, uy, r2) in tris.items() if (px - ux) ** 2 + (py - uy) ** 2 < r2]
        edges = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(e), max(e))
                edges[key] = edges.get(key, 0) + 1
        for t in bad:
            del tris[t]
        for (i, j), count in edges.items():
            if count == 1:
                add(i, j, p)
    return np.array(sorted(tris), dtype=np.int64).reshape(-1, 3)


def gen_terrain(spec: FarmSpec, rng: np.random.Generator | None = None) -> TerrainMesh:
    """Random triangulated ground: the four farm corners plus ``n_vertices`` uniform points."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    L = spec.farm_size
    corners = np.array([[0.0, 0.0], [L, 0.0], [L, L], [0.0, L]])
    inner = rng.uniform(0.0, L, size=(spec.n_vertices, 2))
    xy = np.concatenate([corners, inner], axis=0)
    z = rng.uniform(-spec.height_range, spec.height_range, size=len(xy))
    tris = bowyer_watson(xy, (0, 1, 2, 3))
    return TerrainMesh(np.column_stack([xy, z]), tris)


def _barycentric(tri_xy: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Barycentric weights of queries ``q`` (Q, 2) in triangles (T, 3, 2) -> (Q, T, 3)."""
    a = tri_xy[None, :, 0, :]
    b = tri_xy[None, :, 1, :]
    c = tri_xy[None, :, 2, :]
    p = q[:, None, :]
    v0 = b - a
    v1 = c - a
    v2 = p - a
    den = v0[..., 0] * v1[..., 1] - v1[..., 0] * v0[..., 1]
    wb = (v2[..., 0] * v1[..., 1] - v1[..., 0] * v2[..., 1]) / den
    wc = (v0[..., 0] * v2[..., 1] - v2[..., 0] * v0[..., 1]) / den
    return np.stack([1.0 - wb - wc, wb, wc], axis=-1)


def terrain_height_at(mesh: TerrainMesh, xy) -> float | np.ndarray:
    """Barycentric terrain height at one ``(x, y)`` or an ``(N, 2)`` array of them."""
    q = np.asarray(xy, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 2)
    coords = mesh.triangle_coords()
    tri_xy = coords[:, :, :2]
    tri_z = coords[:, :, 2]
    out = np.empty(len(q))
    for start in range(0, len(q), 512):
        chunk = q[start : start + 512]
        w = _barycentric(tri_xy, chunk)
        inside = np.all(w >= -BARY_TOL, axis=2)
        found = inside.any(axis=1)
        if not np.all(found):
            bad = chunk[~found][0]
            raise OutOfTerrainError(f"point ({bad[0]:.6g}, {bad[1]:.6g}) is outside the terrain")
        t = np.argmax(inside, axis=1)
        rows = np.arange(len(chunk))
        out[start : start + len(chunk)] = np.sum(w[rows, t] * tri_z[t], axis=1)
    return float(out[0]) if single else out


# -- plots ---------------------------------------------------------------------


def plot_rectangles(spec: FarmSpec) -> list[tuple[int, int, float, float]]:
    """``(row, col, x_min, y_min)`` of every plot rectangle, checked against the farm bounds."""
    if spec.gap_x <= 0 or spec.gap_y <= 0:
        raise InvalidSpecError("plots overlap: gaps must be positive")
    x0, y0 = spec.layout_origin()
    rects = []
    for r, off in enumerate(spec.offsets()):
        for c in range(spec.plots_per_row):
            x = x0 + off + c * spec.pitch_x
            y = y0 + r * spec.pitch_y
            if x < 0 or y < 0 or x + spec.plot_width > spec.farm_size or y + spec.plot_length > spec.farm_size:
                raise InvalidSpecError(f"plot ({r}, {c}) does not fit inside the {spec.farm_size} m farm")
            rects.append((r, c, x, y))
    return rects


def gen_plots(spec: FarmSpec, mesh: TerrainMesh, rng: np.random.Generator | None = None):
    """Place ``plants_per_plot`` randomised canopy proxies in every plot.

    Each base is drawn inside the plot rectangle shrunk by that plant's canopy
    radius, so every canopy footprint stays inside its plot.
    """
    if rng is None:
        rng = np.random.default_rng([spec.seed, 1])
    rects = plot_rectangles(spec)
    plants: list[PlantInstance] = []
    truths: list[PlotTruth] = []
    n = spec.plants_per_plot
    for r, c, x, y in rects:
        scale = rng.uniform(spec.scale_min, spec.scale_max, size=n)
        yaw = rng.uniform(0.0, 2.0 * math.pi, size=n)
        # keep each canopy footprint (radius base_radius * scale) inside the plot
        reach = spec.canopy_radius * scale
        ix = np.minimum(reach, 0.5 * spec.plot_width)
        iy = np.minimum(reach, 0.5 * spec.plot_length)
        bx = x + ix + rng.uniform(0.0, 1.0, size=n) * (spec.plot_width - 2.0 * ix)
        by = y + iy + rng.uniform(0.0, 1.0, size=n) * (spec.plot_length - 2.0 * iy)
        bz = terrain_height_at(mesh, np.column_stack([bx, by]))
        heights = []
        for k in range(n):
            p = PlantInstance(
                base=(float(bx[k]), float(by[k]), float(bz[k])),
                scale=float(scale[k]),
                yaw=float(yaw[k]),
                base_radius=spec.canopy_radius,
                nominal_height=spec.nominal_height,
                aspect=spec.canopy_aspect,
                row=r,
                col=c,
            )
            plants.append(p)
            heights.append(p.true_height)
        box = OrientedBox(
            center=(x + 0.5 * spec.plot_width, y + 0.5 * spec.plot_length),
            width=spec.plot_width,
            length=spec.plot_length,
            yaw=0.5 * math.pi,
        )
        truths.append(PlotTruth(r, c, box, heights))
    x0, y0 = spec.layout_origin()
    grid = PlotGrid(
        anchor=(x0 + spec.offsets()[0] + 0.5 * spec.plot_width, y0 + 0.5 * spec.plot_length),
        yaw=0.0,
        plot_width=spec.plot_width,
        plot_length=spec.plot_length,
        pitch_x=spec.pitch_x,
        pitch_y=spec.pitch_y,
        rows=spec.rows,
        cols=spec.plots_per_row,
    )
    return plants, FarmGroundTruth(truths, grid)


@dataclass
class Farm:
    spec: FarmSpec
    terrain: TerrainMesh
    plants: list
    truth: FarmGroundTruth


def generate_farm(spec: FarmSpec) -> Farm:
    mesh = gen_terrain(spec)
    plants, truth = gen_plots(spec, mesh)
    return Farm(spec, mesh, plants, truth)


# -- manifest ------------------------------------------------------------------


def farm_to_manifest(farm: Farm) -> dict:
    return {
        "spec": farm.spec.to_dict(),
        "terrain": {
            "vertices": farm.terrain.vertices.tolist(),
            "triangles": farm.terrain.triangles.tolist(),
        },
        "plants": [
            {
                "row": p.row,
                "col": p.col,
                "base": list(p.base),
                "scale": p.scale,
                "yaw": p.yaw,
                "base_radius": p.base_radius,
                "nominal_height": p.nominal_height,
                "aspect": p.aspect,
                "true_height": p.true_height,
            }
            for p in farm.plants
        ],
        "ground_truth": {
            "grid": farm.truth.grid.to_dict(),
            "plots": [
                {
                    "row": t.row,
                    "col": t.col,
                    "box": t.box.to_dict(),
                    "plant_heights": list(t.plant_heights),
                    "true_height": t.true_height,
                }
                for t in farm.truth.plots
            ],
        },
    }


def farm_from_manifest(doc: dict) -> Farm:
    spec = FarmSpec(**doc["spec"])
    terrain = TerrainMesh(
        np.asarray(doc["terrain"]["vertices"], dtype=np.float64).reshape(-1, 3),
        np.asarray(doc["terrain"]["triangles"], dtype=np.int64).reshape(-1, 3),
    )
    plants = [
        PlantInstance(
            base=tuple(p["base"]),
            scale=p["scale"],
            yaw=p["yaw"],
            base_radius=p["base_radius"],
            nominal_height=p["nominal_height"],
            aspect=p["aspect"],
            row=p["row"],
            col=p["col"],
        )
        for p in doc["plants"]
    ]
    gt = doc["ground_truth"]
    truth = FarmGroundTruth(
        [PlotTruth(t["row"], t["col"], OrientedBox.from_dict(t["box"]), list(t["plant_heights"])) for t in gt["plots"]],
        PlotGrid.from_dict(gt["grid"]),
    )
    return Farm(spec, terrain, plants, truth)
