"""Pipeline configuration: one flat JSON document, validated before any stage runs."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import jsonschema

from .core import Aabb, VoxelParams
from .errors import ConfigError
from .farmgen import FarmSpec
from .groundheight import RansacParams
from .plotdetect import KMeansParams
from .scansim import SensorModel

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_int0 = {"type": "integer", "minimum": 0}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _nullable(s):
    return {"anyOf": [s, {"type": "null"}]}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        # farm generation
        "farm_size": _pos,
        "farm_vertices": _int0,
        "farm_height_range": _nonneg,
        "plot_width": _pos,
        "plot_length": _pos,
        "gap_x": _pos,
        "gap_y": _pos,
        "plants_per_plot": _int1,
        "scale_min": _pos,
        "scale_max": _pos,
        "rows": _int1,
        "plots_per_row": _int1,
        "row_offsets": {"type": "array", "items": _num},
        "canopy_height": _pos,
        "canopy_radius": _pos,
        "canopy_aspect": _pos,
        "farm_seed": _int0,
        # sensor and flight
        "sensor_channels": _int1,
        "sensor_vfov_deg": _nonneg,
        "sensor_azimuth_step_deg": _pos,
        "sensor_max_range": _pos,
        "sensor_noise_sigma": _nonneg,
        "sensor_pose_noise_sigma": _nonneg,
        "sensor_seed": _int0,
        "flight_altitude": _pos,
        "flight_line_spacing": _pos,
        "flight_sample_spacing": _pos,
        "flight_speed": _pos,
        # map building
        "voxel_leaf": _pos,
        "crop_min": _nullable(_vec3),
        "crop_max": _nullable(_vec3),
        # plot detection
        "z_min": _nullable(_num),
        "z_percentile": {"type": "number", "minimum": 0, "maximum": 100},
        "z_offset": _num,
        "z_mode": {"enum": ["global", "local"]},
        "z_local_cell": _pos,
        "kmeans_k": _nullable(_int1),
        "kmeans_max_iters": _int1,
        "kmeans_tol": _nonneg,
        "kmeans_seed": _int0,
        "yaw_bin_deg": _pos,
        "dim_bin": _pos,
        "grid_anchor": _nullable(_vec2),
        "grid_pitch_x": _nullable(_pos),
        "grid_pitch_y": _nullable(_pos),
        "grid_rows": _nullable(_int1),
        "grid_cols": _nullable(_int1),
        "grid_yaw_offset_deg": _num,
        "snap": {"type": "boolean"},
        # height estimation
        "length_extension": _nonneg,
        "ransac_threshold": _pos,
        "ransac_max_iters": _int1,
        "ransac_min_inliers": _nullable(_int1),
        "ransac_seed": _int0,
        "height_method": {"enum": ["max", "percentile"]},
        "height_percentile": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
        "workers": _int1,
    },
}


@dataclass
class PipelineConfig:
    farm_size: float = 26.0
    farm_vertices: int = 150
    farm_height_range: float = 0.0
    plot_width: float = 1.0
    plot_length: float = 2.5
    gap_x: float = 1.0
    gap_y: float = 1.5
    plants_per_plot: int = 90
    scale_min: float = 0.8
    scale_max: float = 1.2
    rows: int = 3
    plots_per_row: int = 10
    row_offsets: list = field(default_factory=list)
    canopy_height: float = 0.8
    canopy_radius: float = 0.12
    canopy_aspect: float = 0.8
    farm_seed: int = 0

    sensor_channels: int = 16
    sensor_vfov_deg: float = 15.0
    sensor_azimuth_step_deg: float = 0.2
    sensor_max_range: float = 100.0
    sensor_noise_sigma: float = 0.03
    sensor_pose_noise_sigma: float = 0.0
    sensor_seed: int = 0
    flight_altitude: float = 15.0
    flight_line_spacing: float = 5.0
    flight_sample_spacing: float = 1.0
    flight_speed: float = 2.0

    voxel_leaf: float = 0.05
    crop_min: Optional[list] = None
    crop_max: Optional[list] = None

    z_min: Optional[float] = None
    z_percentile: float = 5.0
    z_offset: float = 0.3
    z_mode: str = "global"
    z_local_cell: float = 0.25
    kmeans_k: Optional[int] = None
    kmeans_max_iters: int = 300
    kmeans_tol: float = 1e-6
    kmeans_seed: int = 0
    yaw_bin_deg: float = 2.0
    dim_bin: float = 0.10
    grid_anchor: Optional[list] = None
    grid_pitch_x: Optional[float] = None
    grid_pitch_y: Optional[float] = None
    grid_rows: Optional[int] = None
    grid_cols: Optional[int] = None
    grid_yaw_offset_deg: float = 0.0
    snap: bool = False

    length_extension: float = 0.75
    ransac_threshold: float = 0.05
    ransac_max_iters: int = 1000
    ransac_min_inliers: Optional[int] = None
    ransac_seed: int = 0
    height_method: str = "percentile"
    height_percentile: float = 99.0
    workers: int = 1

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        validate(doc)
        cfg = cls(**doc)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **overrides) -> "PipelineConfig":
        doc = self.to_dict()
        doc.update(overrides)
        return PipelineConfig.from_dict(doc)

    def check(self):
        if self.scale_min > self.scale_max:
            raise ConfigError("scale_min exceeds scale_max")
        if (self.crop_min is None) != (self.crop_max is None):
            raise ConfigError("crop_min and crop_max must be given together")
        if self.crop_min is not None and any(a > b for a, b in zip(self.crop_min, self.crop_max)):
            raise ConfigError("crop_min exceeds crop_max")
        if self.row_offsets and len(self.row_offsets) != self.rows:
            raise ConfigError("row_offsets needs one entry per row")

    # -- stage parameters --------------------------------------------------

    def farm_spec(self) -> FarmSpec:
        return FarmSpec(
            farm_size=self.farm_size,
            n_vertices=self.farm_vertices,
            height_range=self.farm_height_range,
            plot_width=self.plot_width,
            plot_length=self.plot_length,
            gap_x=self.gap_x,
            gap_y=self.gap_y,
            plants_per_plot=self.plants_per_plot,
            scale_min=self.scale_min,
            scale_max=self.scale_max,
            rows=self.rows,
            plots_per_row=self.plots_per_row,
            row_offsets=tuple(self.row_offsets),
            nominal_height=self.canopy_height,
            canopy_radius=self.canopy_radius,
            canopy_aspect=self.canopy_aspect,
            seed=self.farm_seed,
        )

    def sensor(self) -> SensorModel:
        return SensorModel(
            channels=self.sensor_channels,
            vertical_fov=math.radians(self.sensor_vfov_deg),
            azimuth_step=math.radians(self.sensor_azimuth_step_deg),
            max_range=self.sensor_max_range,
            range_noise_sigma=self.sensor_noise_sigma,
            pose_noise_sigma=self.sensor_pose_noise_sigma,
            seed=self.sensor_seed,
        )

    def voxel(self) -> VoxelParams:
        return VoxelParams(self.voxel_leaf)

    def crop(self) -> Aabb | None:
        if self.crop_min is None:
            return None
        return Aabb(tuple(self.crop_min), tuple(self.crop_max))

    def kmeans(self, default_k: int) -> KMeansParams:
        return KMeansParams(self.kmeans_k or default_k, self.kmeans_max_iters, self.kmeans_tol, self.kmeans_seed)

    def ransac(self) -> RansacParams:
        return RansacParams(self.ransac_threshold, self.ransac_max_iters, self.ransac_min_inliers or 50,
                            self.ransac_seed)

    def grid_layout(self):
        missing = [k for k in ("grid_anchor", "grid_pitch_x", "grid_pitch_y", "grid_rows", "grid_cols")
                   if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"plot grid layout is manual; set {', '.join(missing)}")
        return self.grid_anchor, self.grid_pitch_x, self.grid_pitch_y, self.grid_rows, self.grid_cols


FIELD_NAMES = [f.name for f in fields(PipelineConfig)]


def validate(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None


assert set(FIELD_NAMES) == set(SCHEMA["properties"]), "schema and dataclass out of sync"
