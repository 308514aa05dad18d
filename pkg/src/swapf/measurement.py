"""Particle weighting against the distance-field stack.

The observation is normalized to a fixed square view, pre-rotated into a
small number of yaw bins (rotation cache), and each particle is scored by
summing, over the pixels of its nearest bin, the class weight divided by the
map distance to the nearest same-class pixel, modulated by the center
weight. Instead of materializing a cropped map view per particle, the view
pixel coordinates are mapped through the particle footprint directly into
map indices; tests pin equality against a reference that does materialize
the views.

Per-pixel weight: ``alpha[label] * cdf[pixel] / (distance + d0)``, summed
over bin pixels, plus the ``gamma`` floor. Out-of-map view pixels and
zero-alpha classes are skipped; map lookups outside coverage contribute the
``d_max``-penalized minimum.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .distance import CenterDistanceField, DistanceFieldStack
from .errors import DegenerateWeights, LabelOutOfRange
from .motion import Pose4
from .raster import SemanticRaster, rotate_discard
from .state import ParticleSet

DEFAULT_VIEW_SIDE = 400
DEFAULT_BIN_COUNT = 100


def _apply_thread_env() -> None:
    # SWAPF_THREADS overrides the worker count for the weighting kernel.
    raw = os.environ.get("SWAPF_THREADS")
    if raw:
        import numba

        numba.set_num_threads(max(1, int(raw)))


_apply_thread_env()


@dataclass(frozen=True)
class CameraModel:
    """Square nadir footprint: full field-of-view angle and view resolution."""

    fov_deg: float = 90.0
    view_side: int = DEFAULT_VIEW_SIDE

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must be in (0, 180)")
        if self.view_side < 1:
            raise ValueError("view_side must be >= 1")


def footprint_side(h: float, cam: CameraModel) -> float:
    """Ground side length (meters) seen by the nadir camera at altitude h."""
    if h <= 0:
        raise ValueError("altitude must be > 0")
    return 2.0 * h * math.tan(math.radians(cam.fov_deg) / 2.0)


@dataclass(frozen=True)
class SemanticWeights:
    """Per-class weights, convergence-slowing floor, and division guard."""

    alpha: np.ndarray
    gamma: float = 10.0
    d0: float = 1.0

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.alpha, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("alpha must be a 1D per-class array")
        if arr.min() < 0 or not (arr > 0).any():
            raise ValueError("alpha must be non-negative with at least one > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.d0 <= 0:
            raise ValueError("d0 must be > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "alpha", arr)


@dataclass(frozen=True)
class RotationCache:
    """Observation pre-rotated into evenly spaced yaw bins.

    Bin k holds ``rotate_discard(obs, k * bin_width)``; built once per frame
    and shared read-only by all particles.
    """

    bins: tuple[SemanticRaster, ...]
    bin_width: float

    @property
    def bin_count(self) -> int:
        return len(self.bins)


def build_rotation_cache(
    obs: SemanticRaster, bin_count: int = DEFAULT_BIN_COUNT
) -> RotationCache:
    if obs.width != obs.height:
        raise ValueError("observation must be square (already view-normalized)")
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    width = 360.0 / bin_count
    bins = tuple(rotate_discard(obs, k * width) for k in range(bin_count))
    return RotationCache(bins=bins, bin_width=width)


def nearest_bin(theta: float, cache: RotationCache) -> int:
    """Bin whose rotation angle is closest to theta; half-width ties round up."""
    return int(math.floor(theta / cache.bin_width + 0.5)) % cache.bin_count


@njit(parallel=True, cache=True)
def _weight_kernel(
    bin_ids,
    center_row,
    center_col,
    crop_side,
    labels_flat,
    bin_starts,
    bin_sides,
    swdm,
    d_max,
    alpha_ext,
    cdf,
    d0,
    gamma,
    view_side,
    out,
):
    # swdm is (height, width, class): one pixel's class values share a
    # cache line, which dominates gather cost on large maps
    map_h = swdm.shape[0]
    map_w = swdm.shape[1]
    view_f = float(view_side)
    for i in prange(out.shape[0]):
        b = bin_ids[i]
        s_v = bin_sides[b]
        start = bin_starts[b]
        off = (view_side - s_v) // 2
        s_crop = crop_side[i]
        crop_f = float(s_crop)
        base_r = center_row[i] - s_crop // 2
        base_c = center_col[i] - s_crop // 2
        # nearest-neighbor index of each view row/column inside the crop;
        # multiply before dividing so the result is bit-identical to the
        # materialized crop+resize composition
        src = np.empty(s_v, dtype=np.int64)
        for k in range(s_v):
            src[k] = int((k + off + 0.5) * crop_f / view_f)
        acc = 0.0
        for v in range(s_v):
            view_r = v + off
            r = base_r + src[v]
            row_ok = 0 <= r < map_h
            row_base = start + v * s_v
            for u in range(s_v):
                label = labels_flat[row_base + u]
                a = alpha_ext[label]
                if a <= 0.0:
                    continue
                w_c = cdf[view_r, u + off]
                if w_c <= 0.0:
                    continue
                c = base_c + src[u]
                if row_ok and 0 <= c < map_w:
                    d = float(swdm[r, c, label])
                else:
                    d = d_max
                acc += a * w_c / (d + d0)
        out[i] = acc + gamma
    return out


@dataclass(frozen=True)
class MeasurementContext:
    """Immutable per-run weighting inputs: map, distance stack, view weights."""

    map_raster: SemanticRaster
    swdm: DistanceFieldStack
    cdf: CenterDistanceField
    weights: SemanticWeights
    cam: CameraModel
    bin_count: int = DEFAULT_BIN_COUNT

    def __post_init__(self) -> None:
        if self.map_raster.meters_per_pixel <= 0:
            raise ValueError("map raster must carry meters_per_pixel > 0")
        if self.weights.alpha.size != self.map_raster.class_count:
            raise ValueError("alpha length must equal the map class_count")
        if self.cdf.side != self.cam.view_side:
            raise ValueError("cdf side must equal the camera view_side")
        if (
            self.swdm.class_count != self.map_raster.class_count
            or self.swdm.height != self.map_raster.height
            or self.swdm.width != self.map_raster.width
        ):
            raise ValueError("distance stack does not match the map raster")
        # interleaved (height, width, class) copy for the kernel's gathers
        hwc = np.ascontiguousarray(np.moveaxis(self.swdm.distances, 0, 2))
        object.__setattr__(self, "_swdm_hwc", hwc)


@dataclass
class FrameWeigher:
    """One frame's rotation cache flattened for the kernel."""

    ctx: MeasurementContext
    cache: RotationCache
    _labels_flat: np.ndarray = field(init=False)
    _bin_starts: np.ndarray = field(init=False)
    _bin_sides: np.ndarray = field(init=False)
    _alpha_ext: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        obs0 = self.cache.bins[0]
        if obs0.class_count != self.ctx.map_raster.class_count:
            raise ValueError("observation class_count does not match the map")
        for b in self.cache.bins:
            # bins smaller than the view (rotation discard) sit centered in it
            if b.width > self.ctx.cam.view_side:
                raise ValueError("cache bin exceeds the camera view side")
            if int(b.labels.max()) > obs0.class_count:
                raise LabelOutOfRange("cache bin contains labels beyond OUT_OF_MAP")
        self._labels_flat = np.concatenate(
            [b.labels.ravel() for b in self.cache.bins]
        )
        sides = np.array([b.width for b in self.cache.bins], dtype=np.int64)
        self._bin_sides = sides
        self._bin_starts = np.concatenate(
            ([0], np.cumsum(sides * sides))
        ).astype(np.int64)
        # index class_count (OUT_OF_MAP) scores zero => skipped
        self._alpha_ext = np.append(self.ctx.weights.alpha, 0.0)

    def unnormalized(self, poses: np.ndarray) -> np.ndarray:
        """Raw weights for an (N, 4) pose array; deterministic for any
        kernel thread count (each particle accumulates serially)."""
        poses = np.asarray(poses, dtype=np.float64)
        mpp = self.ctx.map_raster.meters_per_pixel
        cam = self.ctx.cam
        half_fov = math.radians(cam.fov_deg) / 2.0
        footprint_px = 2.0 * np.maximum(poses[:, 2], 0.0) * math.tan(half_fov) / mpp
        crop = np.maximum(1, np.floor(footprint_px + 0.5)).astype(np.int64)
        center_col = np.floor(poses[:, 0] / mpp).astype(np.int64)
        center_row = np.floor(poses[:, 1] / mpp).astype(np.int64)
        bin_ids = np.floor(poses[:, 3] % 360.0 / self.cache.bin_width + 0.5).astype(
            np.int64
        ) % self.cache.bin_count
        out = np.empty(poses.shape[0], dtype=np.float64)
        _weight_kernel(
            bin_ids,
            center_row,
            center_col,
            crop,
            self._labels_flat,
            self._bin_starts,
            self._bin_sides,
            self.ctx._swdm_hwc,
            float(self.ctx.swdm.d_max),
            self._alpha_ext,
            self.cdf_values,
            float(self.ctx.weights.d0),
            float(self.ctx.weights.gamma),
            np.int64(cam.view_side),
            out,
        )
        return out

    @property
    def cdf_values(self) -> np.ndarray:
        return self.ctx.cdf.values


def particle_weight(
    pose: Pose4,
    cache: RotationCache,
    map_raster: SemanticRaster,
    swdm: DistanceFieldStack,
    cdf: CenterDistanceField,
    weights: SemanticWeights,
    cam: CameraModel,
) -> float:
    """Unnormalized weight of a single pose (bulk path on a 1-element batch)."""
    ctx = MeasurementContext(
        map_raster=map_raster, swdm=swdm, cdf=cdf, weights=weights, cam=cam,
        bin_count=cache.bin_count,
    )
    weigher = FrameWeigher(ctx=ctx, cache=cache)
    return float(weigher.unnormalized(pose.as_array()[None, :])[0])


def normalize_weights(unnormalized: np.ndarray) -> np.ndarray:
    """Scale weights to sum to 1; the reduction order is fixed (serial sum)."""
    total = float(np.sum(unnormalized))
    if total <= 0.0 or not math.isfinite(total):
        raise DegenerateWeights(f"weight sum {total} is not positive-finite")
    return unnormalized / total


def weigh_all(
    particles: ParticleSet, weigher: FrameWeigher
) -> tuple[ParticleSet, np.ndarray]:
    """Weight every particle against one frame.

    Returns the particle set with normalized weights (order preserved) and
    the unnormalized weights for diagnostics.
    """
    raw = weigher.unnormalized(particles.poses)
    normalized = normalize_weights(raw)
    updated = ParticleSet(
        poses=particles.poses,
        weights=normalized,
        master_seed=particles.master_seed,
        generation=particles.generation,
    )
    return updated, raw
