"""Particle population lifecycle: initialization strategies, the
predict-weigh-resample step, and adaptive systematic resampling.

Randomness is derived from the particle set's master seed plus its
generation counter, so a run is a pure function of (seed, inputs) no matter
how the weighting kernel is threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySupport
from .measurement import (
    FrameWeigher,
    MeasurementContext,
    build_rotation_cache,
    weigh_all,
)
from .motion import NoiseParams, OdometryInput, predict_all
from .raster import SemanticRaster
from .state import ParticleSet, StateBounds

__all__ = [
    "FullSpace",
    "Layered",
    "CenterSemantic",
    "initialize",
    "systematic_resample",
    "resample_if_needed",
    "step",
    "ParticleSet",
    "StateBounds",
]


@dataclass(frozen=True)
class FullSpace:
    """Uniform i.i.d. draws over the whole 4-DoF search box."""


@dataclass(frozen=True)
class Layered:
    """One uniform (x, y, theta) sample set duplicated at each given height."""

    layer_heights: tuple[float, ...]


@dataclass(frozen=True)
class CenterSemantic:
    """(x, y) restricted to map pixels of the class seen at the view center."""

    center_class: int


InitStrategy = FullSpace | Layered | CenterSemantic


def initialize(
    n: int,
    bounds: StateBounds,
    strategy: InitStrategy,
    seed: int,
    map_raster: SemanticRaster | None = None,
) -> ParticleSet:
    """Draw the initial population; weights start uniform at 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    poses = np.empty((n, 4), dtype=np.float64)

    if isinstance(strategy, FullSpace):
        poses[:, 0] = rng.uniform(*bounds.x, n)
        poses[:, 1] = rng.uniform(*bounds.y, n)
        poses[:, 2] = rng.uniform(*bounds.h, n)
        poses[:, 3] = rng.uniform(0.0, 360.0, n)
    elif isinstance(strategy, Layered):
        layers = strategy.layer_heights
        if not layers:
            raise ValueError("Layered requires at least one height")
        if n % len(layers) != 0:
            raise ValueError(
                f"n={n} must be divisible by the {len(layers)} layer heights"
            )
        per_layer = n // len(layers)
        xy_theta = np.column_stack(
            [
                rng.uniform(*bounds.x, per_layer),
                rng.uniform(*bounds.y, per_layer),
                rng.uniform(0.0, 360.0, per_layer),
            ]
        )
        for k, h in enumerate(layers):
            block = slice(k * per_layer, (k + 1) * per_layer)
            poses[block, 0] = xy_theta[:, 0]
            poses[block, 1] = xy_theta[:, 1]
            poses[block, 2] = h
            poses[block, 3] = xy_theta[:, 2]
    elif isinstance(strategy, CenterSemantic):
        if map_raster is None:
            raise ValueError("CenterSemantic requires the reference map")
        if map_raster.meters_per_pixel <= 0:
            raise ValueError("map raster must be geo-referenced")
        flat = np.flatnonzero(map_raster.labels == strategy.center_class)
        if flat.size == 0:
            raise EmptySupport(
                f"class {strategy.center_class} absent from the map"
            )
        picks = flat[rng.integers(0, flat.size, n)]
        rows, cols = np.divmod(picks, map_raster.width)
        mpp = map_raster.meters_per_pixel
        # uniform position within each selected pixel's ground footprint
        poses[:, 0] = (cols + rng.uniform(0.0, 1.0, n)) * mpp
        poses[:, 1] = (rows + rng.uniform(0.0, 1.0, n)) * mpp
        poses[:, 2] = rng.uniform(*bounds.h, n)
        poses[:, 3] = rng.uniform(0.0, 360.0, n)
    else:
        raise TypeError(f"unknown init strategy {strategy!r}")

    weights = np.full(n, 1.0 / n)
    return ParticleSet(poses=poses, weights=weights, master_seed=seed, generation=0)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling indices from a single uniform draw."""
    n = weights.shape[0]
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0  # guard rounding so the last position always lands
    return np.searchsorted(cumulative, positions, side="right").clip(0, n - 1)


def resample_if_needed(
    particles: ParticleSet,
    ess_threshold_fraction: float,
    rng: np.random.Generator,
) -> ParticleSet:
    """Systematic resample when ESS = 1/sum(w^2) falls below threshold*N."""
    if particles.effective_sample_size() >= ess_threshold_fraction * particles.n:
        return particles
    idx = systematic_resample(particles.weights, rng)
    poses = particles.poses[idx]
    weights = np.full(particles.n, 1.0 / particles.n)
    return ParticleSet(
        poses=poses,
        weights=weights,
        master_seed=particles.master_seed,
        generation=particles.generation,
    )


def step(
    particles: ParticleSet,
    obs: SemanticRaster,
    odo: OdometryInput,
    ctx: MeasurementContext,
    noise: NoiseParams,
    bounds: StateBounds,
    ess_threshold_fraction: float = 0.5,
    body_frame: bool = False,
) -> tuple[ParticleSet, np.ndarray]:
    """One filter iteration: predict, weigh against the frame, resample.

    The observation and odometry are passed separately (never a frame
    object) so ground truth can never leak into the filter. Returns the new
    particle set and the frame's unnormalized weights.
    """
    rng = np.random.default_rng([particles.master_seed, particles.generation])
    poses = predict_all(
        particles.poses, odo, noise, rng, h_range=bounds.h, body_frame=body_frame
    )
    predicted = ParticleSet(
        poses=poses,
        weights=particles.weights,
        master_seed=particles.master_seed,
        generation=particles.generation,
    )
    cache = build_rotation_cache(obs, ctx.bin_count)
    weigher = FrameWeigher(ctx=ctx, cache=cache)
    weighted, raw = weigh_all(predicted, weigher)
    resampled = resample_if_needed(weighted, ess_threshold_fraction, rng)
    advanced = ParticleSet(
        poses=resampled.poses,
        weights=resampled.weights,
        master_seed=resampled.master_seed,
        generation=resampled.generation + 1,
    )
    return advanced, raw
