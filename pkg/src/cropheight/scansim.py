"""Simulated 16-channel spinning LiDAR flown over a generated farm.

Sensor frame: x points along the direction of travel and is the spin axis;
azimuth 0 looks straight down (-z). A channel at elevation ``e`` and azimuth
``a`` fires along ``(sin e, cos e sin a, -cos e cos a)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import RigidPose
from .farmgen import Farm, PlantInstance, TerrainMesh


@dataclass(frozen=True)
class SensorModel:
    channels: int = 16
    vertical_fov: float = math.radians(15.0)
    azimuth_step: float = math.radians(0.2)
    max_range: float = 100.0
    range_noise_sigma: float = 0.03
    pose_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.range_noise_sigma < 0 or self.pose_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not self.azimuth_step > 0:
            raise ValueError("azimuth_step must be positive")

    def elevations(self) -> np.ndarray:
        if self.channels == 1:
            return np.zeros(1)
        return np.linspace(-self.vertical_fov, self.vertical_fov, self.channels)

    def azimuths(self) -> np.ndarray:
        n = max(1, int(round(2.0 * math.pi / self.azimuth_step)))
        return np.arange(n) * (2.0 * math.pi / n)

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, channel-major then azimuth."""
        e = self.elevations()[:, None]
        a = self.azimuths()[None, :]
        d = np.stack(
            np.broadcast_arrays(np.sin(e), np.cos(e) * np.sin(a), -np.cos(e) * np.cos(a)), axis=-1
        )
        return np.ascontiguousarray(d.reshape(-1, 3))


def ray_direction(elevation: float, azimuth: float) -> np.ndarray:
    return np.array(
        [math.sin(elevation), math.cos(elevation) * math.sin(azimuth), -math.cos(elevation) * math.cos(azimuth)]
    )


@dataclass
class ScanTrajectory:
    times: np.ndarray
    poses: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if len(self.times) != len(self.poses):
            raise ValueError("one timestamp per pose")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def to_records(self) -> list[dict]:
        out = []
        for t, p in zip(self.times, self.poses):
            tx, ty, tz = p.translation
            qw, qx, qy, qz = p.rotation
            out.append({"t": float(t), "tx": tx, "ty": ty, "tz": tz, "qw": qw, "qx": qx, "qy": qy, "qz": qz})
        return out

    @classmethod
    def from_records(cls, records: list[dict]) -> "ScanTrajectory":
        poses = [RigidPose((r["tx"], r["ty"], r["tz"]), (r["qw"], r["qx"], r["qy"], r["qz"])) for r in records]
        return cls(np.array([r["t"] for r in records], dtype=np.float64), poses)


def lawnmower_trajectory(farm_size: float, altitude: float, line_spacing: float, sample_spacing: float,
                         speed: float = 2.0) -> ScanTrajectory:
    """Back-and-forth passes along x, evenly spread over ``[0, farm_size]`` in y."""
    for name, v in (("farm_size", farm_size), ("altitude", altitude), ("line_spacing", line_spacing),
                    ("sample_spacing", sample_spacing), ("speed", speed)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    n_lines = int(math.ceil(farm_size / line_spacing - 1e-9)) + 1
    n_samples = int(math.ceil(farm_size / sample_spacing - 1e-9)) + 1
    ys = np.linspace(0.0, farm_size, n_lines)
    xs = np.linspace(0.0, farm_size, n_samples)
    poses = []
    waypoints = []
    for i, y in enumerate(ys):
        forward = i % 2 == 0
        line = xs if forward else xs[::-1]
        yaw = 0.0 if forward else math.pi
        for x in line:
            poses.append(RigidPose.from_yaw(yaw, (float(x), float(y), float(altitude))))
            waypoints.append((x, y))
    wp = np.asarray(waypoints, dtype=np.float64)
    dist = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))])
    return ScanTrajectory(dist / speed, poses)


# -- scene ---------------------------------------------------------------------


class Scene:
    """Terrain triangles and canopy ellipsoids with a uniform xy grid for ray queries."""

    def __init__(self, terrain: TerrainMesh, plants: list[PlantInstance], cell: float = 0.5):
        self.terrain = terrain
        self.plants = plants
        self.tris = np.ascontiguousarray(terrain.triangle_coords().reshape(-1, 9), dtype=np.float64)
        self.ells = np.ascontiguousarray(
            np.array([p.ellipsoid() for p in plants], dtype=np.float64).reshape(-1, 8)
        )
        self.cell = float(cell)
        self._build_grid()

    @classmethod
    def from_farm(cls, farm: Farm, cell: float = 0.5) -> "Scene":
        return cls(farm.terrain, farm.plants, cell)

    def _bounds(self):
        tri_lo = np.column_stack([self.tris[:, 0::3].min(axis=1), self.tris[:, 1::3].min(axis=1)])
        tri_hi = np.column_stack([self.tris[:, 0::3].max(axis=1), self.tris[:, 1::3].max(axis=1)])
        reach = np.maximum(self.ells[:, 3], self.ells[:, 4])
        ell_lo = self.ells[:, :2] - reach[:, None]
        ell_hi = self.ells[:, :2] + reach[:, None]
        return tri_lo, tri_hi, ell_lo, ell_hi

    def _build_grid(self):
        tri_lo, tri_hi, ell_lo, ell_hi = self._bounds()
        lo = np.vstack([tri_lo, ell_lo, np.full((1, 2), np.inf)]).min(axis=0)
        hi = np.vstack([tri_hi, ell_hi, np.full((1, 2), -np.inf)]).max(axis=0)
        if not np.all(np.isfinite(lo)):
            lo = hi = np.zeros(2)
        self.x0, self.y0 = float(lo[0]), float(lo[1])
        self.nx = int(math.floor((hi[0] - lo[0]) / self.cell)) + 1
        self.ny = int(math.floor((hi[1] - lo[1]) / self.cell)) + 1
        self.tri_start, self.tri_items = self._bin(tri_lo, tri_hi)
        self.ell_start, self.ell_items = self._bin(ell_lo, ell_hi)
        zs = [self.tris[:, 2::3].ravel()]
        if len(self.ells):
            zs += [self.ells[:, 2] - self.ells[:, 5], self.ells[:, 2] + self.ells[:, 5]]
        z = np.concatenate(zs) if len(self.tris) or len(self.ells) else np.zeros(1)
        self.zmin, self.zmax = float(z.min()), float(z.max())

    def _bin(self, lo: np.ndarray, hi: np.ndarray):
        n_cells = self.nx * self.ny
        if len(lo) == 0:
            return np.zeros(n_cells + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        i0 = np.clip(np.floor((lo[:, 0] - self.x0) / self.cell).astype(np.int64), 0, self.nx - 1)
        i1 = np.clip(np.floor((hi[:, 0] - self.x0) / self.cell).astype(np.int64), 0, self.nx - 1)
        j0 = np.clip(np.floor((lo[:, 1] - self.y0) / self.cell).astype(np.int64), 0, self.ny - 1)
        j1 = np.clip(np.floor((hi[:, 1] - self.y0) / self.cell).astype(np.int64), 0, self.ny - 1)
        cells, items = [], []
        for k in range(len(lo)):
            ii, jj = np.meshgrid(np.arange(i0[k], i1[k] + 1), np.arange(j0[k], j1[k] + 1), indexing="ij")
            c = (ii * self.ny + jj).ravel()
            cells.append(c)
            items.append(np.full(len(c), k, dtype=np.int64))
        cells = np.concatenate(cells)
        items = np.concatenate(items)
        order = np.lexsort((items, cells))
        cells, items = cells[order], items[order]
        start = np.zeros(n_cells + 1, dtype=np.int64)
        np.cumsum(np.bincount(cells, minlength=n_cells), out=start[1:])
        return start, np.ascontiguousarray(items)

    def cast(self, origin, dirs, max_range: float, backend=None):
        """Nearest hit along each world-frame ray: ``(t, kind, index)``."""
        impl = backend if backend is not None else kernels
        return impl.cast_rays(
            np.ascontiguousarray(origin, dtype=np.float64),
            np.ascontiguousarray(dirs, dtype=np.float64),
            self.tris, self.ells,
            self.x0, self.y0, self.cell, self.nx, self.ny,
            self.tri_start, self.tri_items, self.ell_start, self.ell_items,
            self.zmin, self.zmax, float(max_range),
        )


def _scan_rng(sensor: SensorModel, index: int) -> np.random.Generator:
    return np.random.default_rng(sensor.seed ^ index)


def simulate_scan(pose: RigidPose, sensor: SensorModel, scene: Scene, index: int = 0,
                  backend=None) -> np.ndarray:
    """Noisy returns, in the sensor frame, of one full sensor revolution at ``pose``."""
    dirs = sensor.directions()
    world_dirs = dirs @ pose.matrix().T
    t, _, _ = scene.cast(np.asarray(pose.translation), world_dirs, sensor.max_range, backend)
    rng = _scan_rng(sensor, index)
    sigma = sensor.range_noise_sigma
    # noise is drawn for every ray so the stream does not depend on the scene
    noise = np.clip(rng.standard_normal(len(dirs)) * sigma, -5.0 * sigma, 5.0 * sigma)
    hit = np.isfinite(t)
    rng_m = t[hit] + noise[hit]
    return dirs[hit] * rng_m[:, None]


def reported_pose(pose: RigidPose, sensor: SensorModel, index: int) -> RigidPose:
    """The pose written alongside a scan; jittered in translation when ``pose_noise_sigma > 0``."""
    if sensor.pose_noise_sigma == 0:
        return pose
    rng = np.random.default_rng([sensor.seed ^ index, 1])
    jitter = rng.standard_normal(3) * sensor.pose_noise_sigma
    return RigidPose(tuple(np.asarray(pose.translation) + jitter), pose.rotation)


def simulate_flight(trajectory: ScanTrajectory, sensor: SensorModel, scene: Scene, workers: int = 1,
                    backend=None) -> list[tuple[np.ndarray, RigidPose]]:
    def one(i):
        pose = trajectory.poses[i]
        return simulate_scan(pose, sensor, scene, i, backend), reported_pose(pose, sensor, i)

    idx = range(len(trajectory))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, idx))
    return [one(i) for i in idx]
