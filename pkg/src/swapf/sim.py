"""Synthetic worlds, trajectories, and nadir observation rendering.

Worlds use five classes (ground, building, road, vegetation, water).
Observations are rendered from the same raster the filter matches against,
so realism gaps are modeled only through per-pixel label flips and patch
corruption; that fidelity limit is deliberate.

Rendering extracts the yaw-oriented camera footprint: an axis-aligned crop
large enough to contain it, de-rotated by the ground-truth yaw with the
covered-square discard landing on the footprint boundary, then normalized
to the camera view size. Ground truth rides along in each frame for
evaluation only; the filter API never receives it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedFile, TrajectoryOutOfBounds
from .measurement import CameraModel, footprint_side
from .motion import OdometryInput, Pose4
from .raster import (
    ClassPalette,
    SemanticRaster,
    crop_window,
    load_raster,
    resize_nearest,
    rotate_discard,
    save_raster,
)

GROUND, BUILDING, ROAD, VEGETATION, WATER = range(5)

DEFAULT_PALETTE = ClassPalette(
    names=("ground", "building", "road", "vegetation", "water"),
    colors=((200, 195, 180), (170, 60, 50), (60, 60, 60), (70, 140, 60),
            (50, 90, 170)),
)

ODOMETRY_COLUMNS = ("t", "vx", "vy", "vh", "omega",
                    "gt_x", "gt_y", "gt_h", "gt_theta")


@dataclass(frozen=True)
class WorldSpec:
    """Procedural world parameters; output is deterministic in the seed."""

    size_m: tuple[float, float] = (2000.0, 2000.0)
    meters_per_pixel: float = 1.0
    seed: int = 0
    generator: str = "composite"  # blocks | blobs | composite

    def __post_init__(self) -> None:
        if min(self.size_m) <= 0 or self.meters_per_pixel <= 0:
            raise ValueError("world size and resolution must be positive")
        if self.generator not in ("blocks", "blobs", "composite"):
            raise ValueError(f"unknown generator {self.generator!r}")


@dataclass(frozen=True)
class Waypoint:
    t: float
    pose: Pose4


@dataclass(frozen=True)
class TrajectorySpec:
    """Timestamped waypoints, linearly interpolated at the frame rate."""

    waypoints: tuple[Waypoint, ...]
    frame_rate_hz: float = 1.0
    profile: str = "fixed_altitude"  # or variable_altitude

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        times = [w.t for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint timestamps must be strictly increasing")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be > 0")
        if self.profile not in ("fixed_altitude", "variable_altitude"):
            raise ValueError(f"unknown profile {self.profile!r}")


@dataclass(frozen=True)
class SensorNoiseSpec:
    """Per-pixel label flips, patch mislabeling, and odometry corruption."""

    label_flip_rate: float = 0.0
    patch_count: int = 0
    patch_size: int = 0
    odo_sigma_v: float = 0.0
    odo_sigma_omega: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.label_flip_rate <= 1.0:
            raise ValueError("label_flip_rate must be in [0, 1]")
        if self.patch_count < 0 or self.patch_size < 0:
            raise ValueError("patch parameters must be >= 0")
        if self.odo_sigma_v < 0 or self.odo_sigma_omega < 0:
            raise ValueError("odometry sigmas must be >= 0")


@dataclass(frozen=True)
class ObservationFrame:
    """One time step: view-normalized observation, noisy odometry, and the
    ground-truth pose (evaluation only)."""

    t: float
    obs: SemanticRaster
    odo: OdometryInput
    gt: Pose4


def _road_grid(rng: np.random.Generator, side: int) -> tuple[np.ndarray, list[int], int]:
    """Road mask plus the road center coordinates and half-width used."""
    spacing = max(24, side // 8)
    width = max(3, spacing // 18)
    first = int(rng.integers(spacing // 2, spacing))
    centers = list(range(first, side, spacing))
    mask = np.zeros((side, side), dtype=bool)
    for c in centers:
        lo, hi = max(0, c - width), min(side, c + width + 1)
        mask[lo:hi, :] = True
        mask[:, lo:hi] = True
    return mask, centers, width


def _place_buildings(
    rng: np.random.Generator, labels: np.ndarray, centers: list[int], width: int
) -> None:
    side = labels.shape[0]
    starts = [0] + [c + width + 1 for c in centers]
    ends = [max(0, c - width) for c in centers] + [side]
    for y0, y1 in zip(starts, ends):
        for x0, x1 in zip(starts, ends):
            bw, bh = x1 - x0, y1 - y0
            if bw < 12 or bh < 12:
                continue
            for _ in range(int(rng.integers(1, 4))):
                w = int(rng.integers(max(4, bw // 4), max(5, (3 * bw) // 4)))
                h = int(rng.integers(max(4, bh // 4), max(5, (3 * bh) // 4)))
                x = x0 + int(rng.integers(2, max(3, bw - w - 1)))
                y = y0 + int(rng.integers(2, max(3, bh - h - 1)))
                labels[y : min(y + h, y1), x : min(x + w, x1)] = BUILDING


def _voronoi_patches(rng: np.random.Generator, side: int) -> np.ndarray:
    """Ground/vegetation/water patches from a nearest-seed partition."""
    from scipy.spatial import cKDTree

    n_seeds = max(12, (side * side) // (150 * 150))
    seeds = rng.uniform(0, side, size=(n_seeds, 2))
    # fixed shares keep every class comfortably above the 1% floor
    classes = np.full(n_seeds, GROUND, dtype=np.uint8)
    classes[: max(1, int(n_seeds * 0.35))] = VEGETATION
    classes[max(1, int(n_seeds * 0.35)) : max(2, int(n_seeds * 0.55))] = WATER
    rng.shuffle(classes)
    rows, cols = np.mgrid[0:side, 0:side]
    pts = np.column_stack([rows.ravel(), cols.ravel()]).astype(np.float64)
    _, nearest = cKDTree(seeds).query(pts, workers=-1)
    return classes[nearest].reshape(side, side)


def generate_world(spec: WorldSpec) -> SemanticRaster:
    """Procedural semantic map; every declared class occupies non-trivial area."""
    rng = np.random.default_rng(spec.seed)
    side = int(round(spec.size_m[0] / spec.meters_per_pixel))
    side_y = int(round(spec.size_m[1] / spec.meters_per_pixel))
    if side != side_y:
        raise ValueError("generated worlds are square; pass equal extents")
    if side < 32:
        raise ValueError("world too small to generate")

    if spec.generator == "blocks":
        labels = np.full((side, side), GROUND, dtype=np.uint8)
        road_mask, centers, width = _road_grid(rng, side)
        _place_buildings(rng, labels, centers, width)
        labels[road_mask] = ROAD
    elif spec.generator == "blobs":
        labels = _voronoi_patches(rng, side)
    else:  # composite
        labels = _voronoi_patches(rng, side)
        road_mask, centers, width = _road_grid(rng, side)
        _place_buildings(rng, labels, centers, width)
        labels[road_mask] = ROAD

    return SemanticRaster(
        labels=labels,
        class_count=DEFAULT_PALETTE.class_count,
        meters_per_pixel=spec.meters_per_pixel,
    )


def _apply_label_noise(
    labels: np.ndarray,
    class_count: int,
    noise: SensorNoiseSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    out = labels.copy()
    real = labels < class_count  # OUT_OF_MAP pixels stay untouched
    if noise.label_flip_rate > 0:
        flip = (rng.random(out.shape) < noise.label_flip_rate) & real
        # uniform draw over the other classes
        shift = rng.integers(1, class_count, size=out.shape)
        out[flip] = (out[flip].astype(np.int64) + shift[flip]) % class_count
    if noise.patch_count > 0 and noise.patch_size > 0:
        side = out.shape[0]
        size = min(noise.patch_size, side)
        for _ in range(noise.patch_count):
            y = int(rng.integers(0, side - size + 1))
            x = int(rng.integers(0, side - size + 1))
            cls = int(rng.integers(0, class_count))
            patch = out[y : y + size, x : x + size]
            patch[real[y : y + size, x : x + size]] = cls
    return out


def render_observation(
    world: SemanticRaster,
    gt: Pose4,
    cam: CameraModel,
    noise: SensorNoiseSpec,
    rng: np.random.Generator | int,
) -> SemanticRaster:
    """Simulate the view-normalized semantic nadir image at a pose.

    The rendered view covers exactly the camera footprint at the pose's
    altitude, independent of yaw; the ground scale is never attached to the
    observation (meters_per_pixel stays 0).
    """
    if gt.h <= 0:
        raise ValueError("altitude must be > 0")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mpp = world.meters_per_pixel
    fp_px = footprint_side(gt.h, cam) / mpp
    cx = int(math.floor(gt.x / mpp))
    cy = int(math.floor(gt.y / mpp))
    theta = gt.theta % 360.0

    if theta % 90.0 == 0.0:
        crop = crop_window(world, (cx, cy), max(1, int(math.floor(fp_px + 0.5))))
        oriented = rotate_discard(crop, -theta) if theta else crop
    else:
        rad = math.radians(theta)
        denom = abs(math.sin(rad)) + abs(math.cos(rad))
        s_needed = max(1, int(math.floor(fp_px * denom + 0.5)))
        oriented = rotate_discard(crop_window(world, (cx, cy), s_needed), -theta)

    view = resize_nearest(oriented, cam.view_side)
    noisy = _apply_label_noise(view.labels, world.class_count, noise, rng)
    return SemanticRaster(labels=noisy, class_count=world.class_count,
                          meters_per_pixel=0.0)


def _wrap_deg(delta: float) -> float:
    return (delta + 180.0) % 360.0 - 180.0


def interpolate_trajectory(traj: TrajectorySpec) -> tuple[np.ndarray, list[Pose4]]:
    """Frame timestamps and ground-truth poses at the configured rate."""
    t0 = traj.waypoints[0].t
    t1 = traj.waypoints[-1].t
    n_frames = int(math.floor((t1 - t0) * traj.frame_rate_hz + 0.5)) + 1
    times = t0 + np.arange(n_frames) / traj.frame_rate_hz

    wp_t = np.array([w.t for w in traj.waypoints])
    wp_x = np.array([w.pose.x for w in traj.waypoints])
    wp_y = np.array([w.pose.y for w in traj.waypoints])
    wp_h = np.array([w.pose.h for w in traj.waypoints])
    theta = [traj.waypoints[0].pose.theta]
    for prev, cur in zip(traj.waypoints, traj.waypoints[1:]):
        theta.append(theta[-1] + _wrap_deg(cur.pose.theta - prev.pose.theta))
    wp_theta = np.array(theta)

    poses = [
        Pose4(
            x=float(np.interp(t, wp_t, wp_x)),
            y=float(np.interp(t, wp_t, wp_y)),
            h=float(np.interp(t, wp_t, wp_h)),
            theta=float(np.interp(t, wp_t, wp_theta)) % 360.0,
        )
        for t in times
    ]
    return times, poses


def run_scenario(
    world: SemanticRaster,
    traj: TrajectorySpec,
    noise: SensorNoiseSpec,
    cam: CameraModel,
    seed: int | np.random.Generator = 0,
) -> list[ObservationFrame]:
    """Render the frame stream with noisy finite-difference odometry."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    times, poses = interpolate_trajectory(traj)

    w_m = world.width * world.meters_per_pixel
    h_m = world.height * world.meters_per_pixel
    for pose in poses:
        if not (0.0 <= pose.x < w_m and 0.0 <= pose.y < h_m and pose.h > 0):
            raise TrajectoryOutOfBounds(
                f"pose ({pose.x:.1f}, {pose.y:.1f}, {pose.h:.1f}) leaves the world"
            )

    frames: list[ObservationFrame] = []
    default_dt = 1.0 / traj.frame_rate_hz
    for k, (t, gt) in enumerate(zip(times, poses)):
        obs = render_observation(world, gt, cam, noise, rng)
        if k == 0:
            odo = OdometryInput(vx=0.0, vy=0.0, vh=0.0, omega=0.0, dt=default_dt)
        else:
            dt = float(times[k] - times[k - 1])
            prev = poses[k - 1]
            vx = (gt.x - prev.x) / dt + rng.normal(0.0, noise.odo_sigma_v)
            vy = (gt.y - prev.y) / dt + rng.normal(0.0, noise.odo_sigma_v)
            vh = (gt.h - prev.h) / dt + rng.normal(0.0, noise.odo_sigma_v)
            omega = (_wrap_deg(gt.theta - prev.theta) / dt
                     + rng.normal(0.0, noise.odo_sigma_omega))
            odo = OdometryInput(vx=vx, vy=vy, vh=vh, omega=omega, dt=dt)
        frames.append(ObservationFrame(t=float(t), obs=obs, odo=odo, gt=gt))
    return frames


def save_frames(frames: list[ObservationFrame], out_dir: str | Path) -> None:
    """Persist a frame stream: one raster per frame plus the odometry table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "odometry.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ODOMETRY_COLUMNS)
        for k, f in enumerate(frames):
            save_raster(f.obs, out / f"frame_{k:06d}.smr")
            writer.writerow(
                [f.t, f.odo.vx, f.odo.vy, f.odo.vh, f.odo.omega,
                 f.gt.x, f.gt.y, f.gt.h, f.gt.theta]
            )


def load_frames(in_dir: str | Path) -> list[ObservationFrame]:
    src = Path(in_dir)
    table = src / "odometry.csv"
    if not table.exists():
        raise MalformedFile(f"{table}: missing odometry table")
    frames: list[ObservationFrame] = []
    with open(table, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise MalformedFile(f"{table}: no frames")
    prev_t: float | None = None
    for k, row in enumerate(rows):
        t = float(row["t"])
        if prev_t is None:
            dt = float(rows[1]["t"]) - t if len(rows) > 1 else 1.0
        else:
            dt = t - prev_t
        prev_t = t
        odo = OdometryInput(
            vx=float(row["vx"]), vy=float(row["vy"]), vh=float(row["vh"]),
            omega=float(row["omega"]), dt=dt,
        )
        gt = Pose4(x=float(row["gt_x"]), y=float(row["gt_y"]),
                   h=float(row["gt_h"]), theta=float(row["gt_theta"]))
        # observations may carry OUT_OF_MAP padding near world edges
        obs = load_raster(src / f"frame_{k:06d}.smr", allow_reserved=True)
        frames.append(ObservationFrame(t=t, obs=obs, odo=odo, gt=gt))
    return frames
