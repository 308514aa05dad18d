"""Particle population containers shared by the filter stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import SemanticRaster


@dataclass(frozen=True)
class ParticleSet:
    """Weighted pose hypotheses.

    ``poses`` is (N, 4) float64 with columns (x, y, h, theta); ``weights``
    is (N,) float64 and sums to 1. Arrays are frozen after construction;
    filter stages return new instances instead of mutating.
    """

    poses: np.ndarray
    weights: np.ndarray
    master_seed: int
    generation: int = 0

    def __post_init__(self) -> None:
        poses = np.ascontiguousarray(self.poses, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if poses.ndim != 2 or poses.shape[1] != 4 or poses.shape[0] < 1:
            raise ValueError("poses must be a non-empty (N, 4) array")
        if weights.shape != (poses.shape[0],):
            raise ValueError("weights must be (N,) matching poses")
        poses.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.poses.shape[0]

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


@dataclass(frozen=True)
class StateBounds:
    """Search volume for initialization and altitude clamping (meters/degrees)."""

    x: tuple[float, float]
    y: tuple[float, float]
    h: tuple[float, float] = (100.0, 500.0)

    def __post_init__(self) -> None:
        for lo, hi in (self.x, self.y, self.h):
            if not lo < hi:
                raise ValueError("bounds must be non-empty intervals")

    @classmethod
    def from_map(
        cls, raster: SemanticRaster, h: tuple[float, float] = (100.0, 500.0)
    ) -> "StateBounds":
        if raster.meters_per_pixel <= 0:
            raise ValueError("map raster must be geo-referenced")
        mpp = raster.meters_per_pixel
        return cls(x=(0.0, raster.width * mpp), y=(0.0, raster.height * mpp), h=h)
