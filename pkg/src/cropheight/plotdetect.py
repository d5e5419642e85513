"""Plot detection: k-means of vegetation points, minimum-area boxes, dimension
voting and the plot grid.

Box convention: ``OrientedBox.yaw`` is the direction of the box's long side,
kept in ``[0, pi)``; ``width <= length``. Grid convention: columns advance
along the grid's local x axis ``(cos yaw, sin yaw)`` by ``pitch_x`` and rows
along the local y axis by ``pitch_y``; a plot's width lies along local x and
its length along local y.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .core import as_cloud
from .errors import InsufficientPointsError, InvalidGridError

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float]
    width: float
    length: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def area(self) -> float:
        return self.width * self.length

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors along the length and the width."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c, s]), np.array([-s, c])

    def contains(self, xy, tol: float = 0.0) -> np.ndarray:
        q = np.asarray(xy, dtype=np.float64).reshape(-1, 2) - np.asarray(self.center)
        along, across = self.axes()
        return (np.abs(q @ along) <= 0.5 * self.length + tol) & (np.abs(q @ across) <= 0.5 * self.width + tol)

    def corners(self) -> np.ndarray:
        along, across = self.axes()
        c = np.asarray(self.center)
        hl, hw = 0.5 * self.length * along, 0.5 * self.width * across
        return np.array([c - hl - hw, c + hl - hw, c + hl + hw, c - hl + hw])

    def to_dict(self) -> dict:
        return {"center": list(self.center), "width": self.width, "length": self.length, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox":
        return cls(tuple(d["center"]), d["width"], d["length"], d["yaw"])


@dataclass
class Cluster:
    member_indices: np.ndarray
    centroid: tuple[float, float]


@dataclass(frozen=True)
class KMeansParams:
    k: int
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class VoteResult:
    yaw: float
    width: float
    length: float
    yaw_votes: int
    width_votes: int
    length_votes: int
    yaw_bin: float
    dim_bin: float
    n_boxes: int


@dataclass(frozen=True)
class PlotGrid:
    anchor: tuple[float, float]
    yaw: float
    plot_width: float
    plot_length: float
    pitch_x: float
    pitch_y: float
    rows: int
    cols: int

    def __post_init__(self):
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        if self.rows < 1 or self.cols < 1:
            raise InvalidGridError("grid needs at least one row and one column")
        if self.pitch_x < self.plot_width or self.pitch_y < self.plot_length:
            raise InvalidGridError(
                f"pitch ({self.pitch_x}, {self.pitch_y}) smaller than plot size "
                f"({self.plot_width}, {self.plot_length})"
            )

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c, s]), np.array([-s, c])

    def cell_ids(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def center(self, row: int, col: int) -> np.ndarray:
        ux, uy = self.axes()
        return np.asarray(self.anchor) + col * self.pitch_x * ux + row * self.pitch_y * uy

    def centers(self) -> np.ndarray:
        return np.array([self.center(r, c) for r, c in self.cell_ids()]).reshape(-1, 2)

    def box(self, row: int, col: int, length_extension: float = 0.0) -> OrientedBox:
        return OrientedBox(
            tuple(self.center(row, col)),
            self.plot_width,
            self.plot_length + 2.0 * length_extension,
            (self.yaw + HALF_PI) % math.pi,
        )

    def boxes(self) -> list[OrientedBox]:
        return [self.box(r, c) for r, c in self.cell_ids()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor"] = list(self.anchor)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlotGrid":
        keys = {"anchor", "yaw", "plot_width", "plot_length", "pitch_x", "pitch_y", "rows", "cols"}
        missing = keys - set(d)
        extra = set(d) - keys
        if missing or extra:
            raise InvalidGridError(f"grid document: missing {sorted(missing)}, unknown {sorted(extra)}")
        return cls(
            anchor=tuple(d["anchor"]),
            yaw=float(d["yaw"]),
            plot_width=float(d["plot_width"]),
            plot_length=float(d["plot_length"]),
            pitch_x=float(d["pitch_x"]),
            pitch_y=float(d["pitch_y"]),
            rows=int(d["rows"]),
            cols=int(d["cols"]),
        )


# -- k-means -------------------------------------------------------------------


def _sq_dists(xy: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _assign(xy: np.ndarray, centroids: np.ndarray, chunk: int = 65536):
    labels = np.empty(len(xy), dtype=np.int64)
    best = np.empty(len(xy))
    for s in range(0, len(xy), chunk):
        d = _sq_dists(xy[s : s + chunk], centroids)
        labels[s : s + chunk] = np.argmin(d, axis=1)
        best[s : s + chunk] = d[np.arange(len(d)), labels[s : s + chunk]]
    return labels, best


def _kmeanspp(xy: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(xy)
    centroids = np.empty((k, 2))
    centroids[0] = xy[rng.integers(n)]
    d2 = np.sum((xy - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass is on existing centroids
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total), side="right"))
            idx = min(idx, n - 1)
        centroids[j] = xy[idx]
        d2 = np.minimum(d2, np.sum((xy - centroids[j]) ** 2, axis=1))
    return centroids


def _means(xy: np.ndarray, labels: np.ndarray, k: int):
    counts = np.bincount(labels, minlength=k)
    sx = np.bincount(labels, weights=xy[:, 0], minlength=k)
    sy = np.bincount(labels, weights=xy[:, 1], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.column_stack([sx / counts, sy / counts]), counts


def lloyd(xy, params: KMeansParams):
    """Seeded k-means++ / Lloyd on 2D points.

    Returns ``(labels, centroids, inertia_history)``; ``inertia_history[i]`` is
    the inertia after the i-th assignment step.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    k = params.k
    if len(xy) < k:
        raise InsufficientPointsError(f"{len(xy)} points cannot form {k} clusters")
    rng = np.random.default_rng(params.seed)
    centroids = _kmeanspp(xy, k, rng)
    history = []
    labels = None
    for _ in range(params.max_iters):
        new_labels, d2 = _assign(xy, centroids)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster with the point farthest from its centroid
            far = int(np.argmax(d2))
            new_labels[far] = j
            d2[far] = 0.0
        history.append(float(d2.sum()))
        means, counts = _means(xy, new_labels, k)
        shift = np.max(np.linalg.norm(means - centroids, axis=1))
        unchanged = labels is not None and np.array_equal(labels, new_labels)
        labels = new_labels
        centroids = means
        if unchanged or shift <= params.tol:
            break
    return labels, centroids, history


def kmeans_xy(cloud, params: KMeansParams) -> list[Cluster]:
    pts = as_cloud(cloud)
    labels, _, _ = lloyd(pts[:, :2], params)
    xy = pts[:, :2]
    clusters = []
    for j in range(params.k):
        members = np.flatnonzero(labels == j)
        if len(members) == 0:
            continue
        c = xy[members].mean(axis=0)
        clusters.append(Cluster(members, (float(c[0]), float(c[1]))))
    return clusters


# -- minimum-area box ----------------------------------------------------------


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, without collinear points."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    p = [tuple(v) for v in pts]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper = []
    for q in reversed(p):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def _canonical(center, extent_u, extent_v, theta) -> OrientedBox:
    if extent_u >= extent_v:
        length, width, yaw = extent_u, extent_v, theta
    else:
        length, width, yaw = extent_v, extent_u, theta + HALF_PI
    yaw = yaw % math.pi
    if yaw >= math.pi - 1e-12:
        yaw = 0.0
    return OrientedBox((float(center[0]), float(center[1])), float(width), float(length), float(yaw))


def min_area_obb(points) -> OrientedBox:
    """Smallest-area enclosing rectangle, found by trying every hull edge direction."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise InsufficientPointsError("min_area_obb needs at least one point")
    hull = convex_hull(pts)
    if len(hull) == 1:
        return OrientedBox(tuple(hull[0]), 0.0, 0.0, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        theta = math.atan2(d[1], d[0])
        return _canonical((hull[0] + hull[1]) / 2, float(np.hypot(*d)), 0.0, theta)
    edges = np.roll(hull, -1, axis=0) - hull
    theta = np.arctan2(edges[:, 1], edges[:, 0])
    u = np.column_stack([np.cos(theta), np.sin(theta)])
    v = np.column_stack([-np.sin(theta), np.cos(theta)])
    pu = hull @ u.T  # (H, E)
    pv = hull @ v.T
    ext_u = pu.max(axis=0) - pu.min(axis=0)
    ext_v = pv.max(axis=0) - pv.min(axis=0)
    area = ext_u * ext_v
    e = int(np.argmin(area))
    mid_u = 0.5 * (pu[:, e].max() + pu[:, e].min())
    mid_v = 0.5 * (pv[:, e].max() + pv[:, e].min())
    center = mid_u * u[e] + mid_v * v[e]
    return _canonical(center, float(ext_u[e]), float(ext_v[e]), float(theta[e]))


# -- voting --------------------------------------------------------------------


def _winning_bin(bins: np.ndarray, n_bins: int | None = None):
    lo = bins.min()
    counts = np.bincount(bins - lo, minlength=0 if n_bins is None else n_bins)
    win = int(np.argmax(counts))  # first maximum: ties go to the lower bin
    return win + lo, int(counts[win])


def circular_mean(values, period: float) -> float:
    ang = np.asarray(values, dtype=np.float64) * (2.0 * math.pi / period)
    m = math.atan2(np.sin(ang).mean(), np.cos(ang).mean())
    r = (m * period / (2.0 * math.pi)) % period
    # a tiny negative mean rounds up to exactly one period
    return 0.0 if r >= period else r


def vote_dimensions(boxes: Sequence[OrientedBox], yaw_bin: float, dim_bin: float) -> VoteResult:
    """Histogram yaw (mod pi/2), width and length; average each winning bin."""
    if len(boxes) == 0:
        raise InsufficientPointsError("vote_dimensions needs at least one box")
    if not (yaw_bin > 0 and dim_bin > 0):
        raise ValueError("bin widths must be positive")
    yaws = np.array([b.yaw for b in boxes]) % HALF_PI
    widths = np.array([b.width for b in boxes])
    lengths = np.array([b.length for b in boxes])

    n_yaw = int(math.ceil(HALF_PI / yaw_bin - 1e-9))
    ybins = np.floor(yaws / yaw_bin).astype(np.int64) % n_yaw
    yb, yvotes = _winning_bin(ybins, n_yaw)
    yaw = circular_mean(yaws[ybins == yb], HALF_PI)

    wbins = np.floor(widths / dim_bin).astype(np.int64)
    wb, wvotes = _winning_bin(wbins)
    lbins = np.floor(lengths / dim_bin).astype(np.int64)
    lb, lvotes = _winning_bin(lbins)
    return VoteResult(
        yaw=float(yaw),
        width=float(widths[wbins == wb].mean()),
        length=float(lengths[lbins == lb].mean()),
        yaw_votes=yvotes,
        width_votes=wvotes,
        length_votes=lvotes,
        yaw_bin=float(yaw_bin),
        dim_bin=float(dim_bin),
        n_boxes=len(boxes),
    )


# -- grid ----------------------------------------------------------------------


def grid_yaw_from_vote(vote_yaw: float, offset: float = 0.0) -> float:
    """Fold a mod-pi/2 orientation into [-pi/4, pi/4) and add a user offset."""
    y = vote_yaw % HALF_PI
    if y >= 0.25 * math.pi:
        y -= HALF_PI
    return y + offset


def fit_grid(vote: VoteResult, anchor, pitch_x: float, pitch_y: float, rows: int, cols: int,
             yaw_offset: float = 0.0) -> PlotGrid:
    """Lay a rows x cols grid of voted plot boxes from a manually chosen anchor and pitch."""
    if pitch_x < vote.width or pitch_y < vote.length:
        raise InvalidGridError(
            f"pitch ({pitch_x}, {pitch_y}) smaller than voted plot size ({vote.width:.3f}, {vote.length:.3f})"
        )
    return PlotGrid(
        anchor=tuple(anchor),
        yaw=grid_yaw_from_vote(vote.yaw, yaw_offset),
        plot_width=vote.width,
        plot_length=vote.length,
        pitch_x=pitch_x,
        pitch_y=pitch_y,
        rows=rows,
        cols=cols,
    )


def snap_grid_to_clusters(grid: PlotGrid, clusters: Sequence[Cluster]) -> PlotGrid:
    """Shift the grid by the mean offset from each cell centre to its nearest cluster centroid."""
    if not clusters:
        raise InsufficientPointsError("snap_grid_to_clusters needs at least one cluster")
    centers = grid.centers()
    cents = np.array([c.centroid for c in clusters], dtype=np.float64).reshape(-1, 2)
    d2 = _sq_dists(centers, cents)
    nearest = cents[np.argmin(d2, axis=1)]
    shift = (nearest - centers).mean(axis=0)
    return replace(grid, anchor=(grid.anchor[0] + float(shift[0]), grid.anchor[1] + float(shift[1])))


def grid_local(cloud, grid: PlotGrid) -> np.ndarray:
    """xy of ``cloud`` in the grid frame, relative to the anchor."""
    pts = as_cloud(cloud)
    ux, uy = grid.axes()
    rel = pts[:, :2] - np.asarray(grid.anchor)
    return np.column_stack([rel @ ux, rel @ uy])


def extract_plot_indices(cloud, grid: PlotGrid, length_extension: float = 0.0) -> list[np.ndarray]:
    """Indices of the points inside each (length-extended) plot box, in cell order."""
    if length_extension < 0:
        raise ValueError("length_extension must be non-negative")
    local = grid_local(cloud, grid)
    hw = 0.5 * grid.plot_width
    hl = 0.5 * grid.plot_length + length_extension
    out = []
    for r, c in grid.cell_ids():
        dx = local[:, 0] - c * grid.pitch_x
        dy = local[:, 1] - r * grid.pitch_y
        out.append(np.flatnonzero((np.abs(dx) <= hw) & (np.abs(dy) <= hl)))
    return out


def extract_plot_points(cloud, grid: PlotGrid, length_extension: float = 0.0) -> list[np.ndarray]:
    pts = as_cloud(cloud)
    return [pts[idx] for idx in extract_plot_indices(pts, grid, length_extension)]
