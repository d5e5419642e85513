"""Point and pose primitives, open-loop map assembly and the basic cloud filters.

A point cloud is an ``(N, 3)`` float64 array in meters, z up. Filters return
stable subsets: the relative order of surviving points is the input order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidPoseError

QUAT_TOL = 1e-9


def as_cloud(points) -> np.ndarray:
    """Coerce ``points`` to an ``(N, 3)`` float64 array, rejecting NaN/Inf."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.empty((0, 3), dtype=np.float64)
    arr = arr.reshape(-1, 3)
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("point cloud contains NaN or Inf coordinates")
    return arr


def empty_cloud() -> np.ndarray:
    return np.empty((0, 3), dtype=np.float64)


@dataclass(frozen=True)
class RigidPose:
    """World placement of a scan: ``p_world = R(rotation) @ p + translation``.

    ``rotation`` is a unit quaternion ``(w, x, y, z)``.
    """

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        q = tuple(float(v) for v in self.rotation)
        if len(t) != 3 or len(q) != 4:
            raise InvalidPoseError("pose needs a 3-vector translation and a 4-vector quaternion")
        if not all(np.isfinite(t + q)):
            raise InvalidPoseError("pose contains non-finite values")
        norm = float(np.sqrt(sum(c * c for c in q)))
        if abs(norm - 1.0) > QUAT_TOL:
            raise InvalidPoseError(f"rotation quaternion is not unit (norm={norm!r})")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        half = 0.5 * yaw
        return cls(translation, (float(np.cos(half)), 0.0, 0.0, float(np.sin(half))))

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def inverse(self) -> "RigidPose":
        w, x, y, z = self.rotation
        conj = (w, -x, -y, -z)
        inv = RigidPose((0.0, 0.0, 0.0), conj)
        t = -(inv.matrix() @ np.asarray(self.translation))
        return RigidPose(tuple(t), conj)


@dataclass(frozen=True)
class Aabb:
    """Closed axis-aligned box ``min <= p <= max``."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Aabb corners must be 3-vectors")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


@dataclass(frozen=True)
class VoxelParams:
    leaf: float = 0.05

    def __post_init__(self):
        if not self.leaf > 0:
            raise ValueError("voxel leaf must be positive")


def transform_cloud(cloud, pose: RigidPose) -> np.ndarray:
    pts = as_cloud(cloud)
    return pts @ pose.matrix().T + np.asarray(pose.translation)


def merge_map(scans: Iterable[tuple[np.ndarray, RigidPose]]) -> np.ndarray:
    """Open-loop map: every scan moved into the world frame, concatenated in order."""
    parts = [transform_cloud(cloud, pose) for cloud, pose in scans]
    if not parts:
        return empty_cloud()
    return np.concatenate(parts, axis=0)


def voxel_indices(cloud: np.ndarray, leaf: float) -> np.ndarray:
    return np.floor(cloud / leaf).astype(np.int64)


def voxel_downsample(cloud, params: VoxelParams) -> np.ndarray:
    """Replace the points of every occupied ``leaf``-sized cell by their centroid.

    Cells are anchored at the origin. The output holds one point per occupied
    cell, ordered by the first input point that landed in that cell.
    """
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return empty_cloud()
    idx = voxel_indices(pts, params.leaf)
    _, first, inverse, counts = np.unique(
        idx, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    n_cells = len(first)
    # bincount accumulates sequentially in input order
    sums = np.stack(
        [np.bincount(inverse, weights=pts[:, k], minlength=n_cells) for k in range(3)], axis=1
    )
    centroids = sums / counts[:, None]
    order = np.argsort(first, kind="stable")
    return centroids[order]


def crop_box(cloud, box: Aabb) -> np.ndarray:
    pts = as_cloud(cloud)
    lo = np.asarray(box.min)
    hi = np.asarray(box.max)
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    return pts[keep]


def z_filter(cloud, z_min: float) -> np.ndarray:
    pts = as_cloud(cloud)
    return pts[pts[:, 2] >= z_min]


def ground_percentile_threshold(cloud, percentile: float = 5.0, offset: float = 0.3) -> float:
    """Default vegetation threshold: a low z-percentile of the map plus an offset."""
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return -np.inf
    return float(np.percentile(pts[:, 2], percentile)) + offset


def local_ground_heights(
    cloud, cell: float = 0.25, window: int = 1, reject: float = 0.1, seed_quantile: float = 0.0
) -> np.ndarray:
    """Height of each point above a locally fitted ground plane.

    Every ``cell``-sized xy square contributes one ground seed, the point at
    the ``seed_quantile`` rank of its z values (0 is the lowest). For each
    square a plane is fitted to the seeds of the ``(2*window+1)**2``
    surrounding squares, refitted once without seeds further than ``reject``
    from the first fit, and each point is measured against its square's plane.
    """
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return np.empty(0)
    ij = np.floor(pts[:, :2] / cell).astype(np.int64)
    ij -= ij.min(axis=0)
    nx, ny = (ij.max(axis=0) + 1).tolist()
    flat = ij[:, 0] * ny + ij[:, 1]
    order = np.lexsort((pts[:, 2], flat))
    starts = np.flatnonzero(np.r_[True, flat[order][1:] != flat[order][:-1]])
    sizes = np.diff(np.r_[starts, len(order)])
    first = order[starts + np.floor(seed_quantile * (sizes - 1)).astype(np.int64)]
    seeds = np.full((nx * ny, 3), np.nan)
    seeds[flat[first]] = pts[first]
    seeds = seeds.reshape(nx, ny, 3)

    w = window
    padded = np.pad(seeds, ((w, w), (w, w), (0, 0)), constant_values=np.nan)
    neigh = np.stack(
        [padded[di : di + nx, dj : dj + ny] for di in range(2 * w + 1) for dj in range(2 * w + 1)], axis=2
    )  # (nx, ny, K, 3)
    # local coordinates keep the normal equations well conditioned
    ci = (np.arange(nx)[:, None, None] + 0.5) * cell
    cj = (np.arange(ny)[None, :, None] + 0.5) * cell
    lx = neigh[..., 0] - (pts[:, 0].min() // cell * cell + ci)
    ly = neigh[..., 1] - (pts[:, 1].min() // cell * cell + cj)
    lz = neigh[..., 2]
    valid = np.isfinite(lz)
    lx, ly, lz = np.where(valid, lx, 0.0), np.where(valid, ly, 0.0), np.where(valid, lz, 0.0)

    def fit(wt):
        s = lambda a: np.sum(wt * a, axis=2)
        A = np.stack(
            [np.stack([s(lx * lx), s(lx * ly), s(lx)], -1),
             np.stack([s(lx * ly), s(ly * ly), s(ly)], -1),
             np.stack([s(lx), s(ly), s(np.ones_like(lx))], -1)], -2)
        b = np.stack([s(lx * lz), s(ly * lz), s(lz)], -1)
        n = s(np.ones_like(lx))
        ok = (n >= 3) & (np.abs(np.linalg.det(A)) > 1e-12)
        coef = np.zeros(b.shape)
        coef[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
        # too few seeds for a plane: fall back to their lowest height
        low = np.min(np.where(wt > 0, lz, np.inf), axis=2)
        coef[~ok] = 0.0
        coef[~ok, 2] = np.where(np.isfinite(low[~ok]), low[~ok], 0.0)
        return coef

    wt = valid.astype(np.float64)
    coef = fit(wt)
    resid = lz - (coef[..., None, 0] * lx + coef[..., None, 1] * ly + coef[..., None, 2])
    coef = fit(wt * (np.abs(resid) <= reject))

    a, b, c = coef[ij[:, 0], ij[:, 1]].T
    ox = pts[:, 0] - (pts[:, 0].min() // cell * cell + (ij[:, 0] + 0.5) * cell)
    oy = pts[:, 1] - (pts[:, 1].min() // cell * cell + (ij[:, 1] + 0.5) * cell)
    return pts[:, 2] - (a * ox + b * oy + c)


def concat(clouds: Sequence[np.ndarray]) -> np.ndarray:
    parts = [as_cloud(c) for c in clouds]
    parts = [p for p in parts if len(p)]
    if not parts:
        return empty_cloud()
    return np.concatenate(parts, axis=0)
