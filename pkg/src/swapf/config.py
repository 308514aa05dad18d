"""Run configuration: YAML schema, validation, and defaults.

A run config either references a map raster (``map: path.smr``) or embeds a
procedural ``world`` block, plus ``trajectory``, ``sensor_noise``,
``camera``, and ``filter`` sections. Every parameter has a default matching
the documented operating point, so a config can be as small as a world seed
and two waypoints. See README for the full schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .measurement import CameraModel
from .motion import Pose4
from .raster import ClassPalette
from .sim import (
    DEFAULT_PALETTE,
    SensorNoiseSpec,
    TrajectorySpec,
    Waypoint,
    WorldSpec,
)


@dataclass(frozen=True)
class FilterParams:
    """Everything the filter side of a run needs beyond the map and frames."""

    n_particles: int = 5000
    init: str = "full_space"  # full_space | layered | center_semantic
    layer_heights: tuple[float, ...] = (150.0, 250.0, 350.0, 450.0)
    center_class: str | int = "auto"  # class name/id, or auto = view-center label
    sigma_xy: float = 15.0
    sigma_h: float = 15.0
    sigma_theta: float = 5.0
    gamma: float = 10.0
    d0: float = 1.0
    alpha: dict[str | int, float] | None = None  # None = 1.0 for non-ground classes
    rotation_bins: int = 100
    use_cdf: bool = True
    cdf_profile: str = "linear"
    ess_fraction: float = 0.5
    h_bounds: tuple[float, float] = (100.0, 500.0)
    body_frame: bool = False
    dbscan_eps: float = 30.0
    dbscan_min_pts: int = 50
    cov_threshold: float = 100.0

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if self.init not in ("full_space", "layered", "center_semantic"):
            raise ConfigError(f"unknown init strategy {self.init!r}")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise ConfigError("ess_fraction must be in (0, 1]")
        if self.rotation_bins < 1:
            raise ConfigError("rotation_bins must be >= 1")
        if self.gamma < 0 or self.d0 <= 0:
            raise ConfigError("gamma must be >= 0 and d0 > 0")
        if not self.h_bounds[0] < self.h_bounds[1]:
            raise ConfigError("h_bounds must be an increasing pair")


@dataclass(frozen=True)
class RunConfig:
    trajectory: TrajectorySpec
    world: WorldSpec | None = None
    map_path: str | None = None
    map_scale: int = 1
    camera: CameraModel = field(default_factory=CameraModel)
    sensor: SensorNoiseSpec = field(default_factory=SensorNoiseSpec)
    filter: FilterParams = field(default_factory=FilterParams)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if (self.world is None) == (self.map_path is None):
            raise ConfigError("exactly one of 'world' or 'map' must be given")
        if self.map_scale < 1:
            raise ConfigError("map_scale must be >= 1")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


def resolve_alpha(
    spec: dict[str | int, float] | None,
    class_count: int,
    palette: ClassPalette | None,
) -> np.ndarray:
    """Per-class weight array from a name/id mapping.

    Default: 1.0 everywhere except a class named "ground" (weight 0); maps
    without a palette default to all ones.
    """
    alpha = np.ones(class_count, dtype=np.float64)
    if spec is None:
        if palette is not None and "ground" in palette.names:
            alpha[palette.id_of("ground")] = 0.0
        return alpha
    alpha[:] = 0.0
    for key, value in spec.items():
        if isinstance(key, str):
            if palette is None:
                raise ConfigError(
                    f"alpha key {key!r} needs a palette; use integer class ids"
                )
            try:
                idx = palette.id_of(key)
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            idx = int(key)
        if not 0 <= idx < class_count:
            raise ConfigError(f"alpha class id {idx} out of range")
        if value < 0:
            raise ConfigError("alpha weights must be >= 0")
        alpha[idx] = float(value)
    if not (alpha > 0).any():
        raise ConfigError("at least one alpha weight must be positive")
    return alpha


def _require(section: dict, key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"missing key {key!r} in {where}")
    return section[key]


def _pair(value: Any, where: str) -> tuple[float, float]:
    try:
        a, b = value
        return float(a), float(b)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a pair of numbers") from None


def parse_world(section: dict) -> WorldSpec:
    try:
        return WorldSpec(
            size_m=_pair(section.get("size_m", (2000.0, 2000.0)), "world.size_m"),
            meters_per_pixel=float(section.get("meters_per_pixel", 1.0)),
            seed=int(section.get("seed", 0)),
            generator=str(section.get("generator", "composite")),
        )
    except ValueError as exc:
        raise ConfigError(f"world: {exc}") from exc


def parse_trajectory(section: dict) -> TrajectorySpec:
    raw_wps = _require(section, "waypoints", "trajectory")
    waypoints = []
    for k, wp in enumerate(raw_wps):
        where = f"trajectory.waypoints[{k}]"
        waypoints.append(
            Waypoint(
                t=float(_require(wp, "t", where)),
                pose=Pose4(
                    x=float(_require(wp, "x", where)),
                    y=float(_require(wp, "y", where)),
                    h=float(_require(wp, "h", where)),
                    theta=float(wp.get("theta", 0.0)),
                ),
            )
        )
    try:
        return TrajectorySpec(
            waypoints=tuple(waypoints),
            frame_rate_hz=float(section.get("frame_rate_hz", 1.0)),
            profile=str(section.get("profile", "fixed_altitude")),
        )
    except ValueError as exc:
        raise ConfigError(f"trajectory: {exc}") from exc


def parse_sensor(section: dict) -> SensorNoiseSpec:
    try:
        return SensorNoiseSpec(
            label_flip_rate=float(section.get("label_flip_rate", 0.0)),
            patch_count=int(section.get("patch_count", 0)),
            patch_size=int(section.get("patch_size", 0)),
            odo_sigma_v=float(section.get("odo_sigma_v", 0.0)),
            odo_sigma_omega=float(section.get("odo_sigma_omega", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"sensor_noise: {exc}") from exc


def parse_camera(section: dict) -> CameraModel:
    try:
        return CameraModel(
            fov_deg=float(section.get("fov_deg", 90.0)),
            view_side=int(section.get("view_side", 400)),
        )
    except ValueError as exc:
        raise ConfigError(f"camera: {exc}") from exc


def parse_filter(section: dict) -> FilterParams:
    known = {
        "n_particles", "init", "layer_heights", "center_class", "sigma_xy",
        "sigma_h", "sigma_theta", "gamma", "d0", "alpha", "rotation_bins",
        "use_cdf", "cdf_profile", "ess_fraction", "h_bounds", "body_frame",
        "dbscan", "dbscan_eps", "dbscan_min_pts", "cov_threshold",
    }
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown filter keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key in ("n_particles", "rotation_bins", "dbscan_min_pts"):
        if key in section:
            kwargs[key] = int(section[key])
    for key in ("sigma_xy", "sigma_h", "sigma_theta", "gamma", "d0",
                "ess_fraction", "dbscan_eps", "cov_threshold"):
        if key in section:
            kwargs[key] = float(section[key])
    for key in ("init", "cdf_profile"):
        if key in section:
            kwargs[key] = str(section[key])
    for key in ("use_cdf", "body_frame"):
        if key in section:
            kwargs[key] = bool(section[key])
    if "layer_heights" in section:
        kwargs["layer_heights"] = tuple(float(v) for v in section["layer_heights"])
    if "center_class" in section:
        kwargs["center_class"] = section["center_class"]
    if "alpha" in section and section["alpha"] is not None:
        kwargs["alpha"] = dict(section["alpha"])
    if "h_bounds" in section:
        kwargs["h_bounds"] = _pair(section["h_bounds"], "filter.h_bounds")
    if "dbscan" in section:
        sub = section["dbscan"]
        if "eps" in sub:
            kwargs["dbscan_eps"] = float(sub["eps"])
        if "min_pts" in sub:
            kwargs["dbscan_min_pts"] = int(sub["min_pts"])
    return FilterParams(**kwargs)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    world = parse_world(raw["world"]) if "world" in raw else None
    map_path = raw.get("map")
    if map_path is not None and base_dir is not None:
        map_path = str((base_dir / map_path).resolve())
    if "trajectory" not in raw:
        raise ConfigError("missing 'trajectory' section")
    return RunConfig(
        trajectory=parse_trajectory(raw["trajectory"]),
        world=world,
        map_path=map_path,
        map_scale=int(raw.get("map_scale", 1)),
        camera=parse_camera(raw.get("camera", {})),
        sensor=parse_sensor(raw.get("sensor_noise", {})),
        filter=parse_filter(raw.get("filter", {})),
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out"),
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    cfg = config_from_dict(raw, base_dir=path.parent)
    if cfg.map_path is not None and not Path(cfg.map_path).exists():
        raise ConfigError(f"map raster not found: {cfg.map_path}")
    return cfg


def load_section_file(path: str | Path, section: str) -> dict:
    """Read a standalone YAML file used by ``swapf simulate``.

    Accepts either the bare section mapping or a file with the section
    nested under its name.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return raw.get(section, raw)


DEFAULT_PALETTE_BY_NAME = {name: i for i, name in enumerate(DEFAULT_PALETTE.names)}
