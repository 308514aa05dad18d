"""Per-class Euclidean distance fields of the reference map, plus the
center-weighting matrix applied to observation pixels.

The distance stack holds, for every class, the exact Euclidean distance (in
pixels) from each map pixel to the nearest pixel of that class. Distances
are computed as exact integer squared distances and stored as float32 after
the square root; classes absent from the map hold the sentinel ``d_max``
(map diagonal + 1), which also penalizes lookups outside the map.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import MalformedFile
from .raster import SemanticRaster

SWDM_MAGIC = b"SWD1"
_CACHE_HEADER = struct.Struct("<4sIIH")


@dataclass(frozen=True)
class DistanceFieldStack:
    """Stacked per-class distance grids, shape (class_count, height, width)."""

    distances: np.ndarray
    d_max: float

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.distances, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError("distances must be (class_count, height, width)")
        arr.flags.writeable = False
        object.__setattr__(self, "distances", arr)

    @property
    def class_count(self) -> int:
        return self.distances.shape[0]

    @property
    def height(self) -> int:
        return self.distances.shape[1]

    @property
    def width(self) -> int:
        return self.distances.shape[2]


@dataclass(frozen=True)
class CenterDistanceField:
    """Radial weight grid in [0, 1] over the normalized observation view.

    Centered on ``(side - 1) / 2`` so the grid is exactly symmetric under
    90-degree rotations.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("values must be a square 2D grid")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def side(self) -> int:
        return self.values.shape[0]


def map_diagonal_sentinel(width: int, height: int) -> float:
    """Distance larger than any realizable in-map distance."""
    return math.hypot(width, height) + 1.0


def class_squared_distances(raster: SemanticRaster, class_id: int) -> np.ndarray | None:
    """Exact integer squared distance to the nearest pixel of ``class_id``.

    Returns None when the class does not occur in the raster. The nearest
    pixel is resolved through the exact Euclidean feature transform, so the
    squared distances are exact int64 values.
    """
    hit = raster.labels == class_id
    if not hit.any():
        return None
    ind = distance_transform_edt(~hit, return_distances=False, return_indices=True)
    rows = np.arange(raster.height, dtype=np.int64)[:, None]
    cols = np.arange(raster.width, dtype=np.int64)[None, :]
    dr = ind[0].astype(np.int64) - rows
    dc = ind[1].astype(np.int64) - cols
    return dr * dr + dc * dc


def build_swdm(raster: SemanticRaster, workers: int | None = None) -> DistanceFieldStack:
    """Build the per-class distance stack for a reference map.

    Per-class transforms are independent and run on a small thread pool;
    the result is bit-identical regardless of worker count.
    """
    d_max = map_diagonal_sentinel(raster.width, raster.height)
    stack = np.empty(
        (raster.class_count, raster.height, raster.width), dtype=np.float32
    )

    def fill(class_id: int) -> None:
        sq = class_squared_distances(raster, class_id)
        if sq is None:
            stack[class_id].fill(np.float32(d_max))
        else:
            stack[class_id] = np.sqrt(sq).astype(np.float32)

    n_workers = workers or min(4, raster.class_count)
    if n_workers <= 1:
        for c in range(raster.class_count):
            fill(c)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(fill, range(raster.class_count)))
    return DistanceFieldStack(distances=stack, d_max=d_max)


def sample_distance(
    stack: DistanceFieldStack, class_id: int, point: tuple[int, int]
) -> float:
    """Distance for ``class_id`` at pixel ``point`` = (x, y).

    Out-of-bounds points and the OUT_OF_MAP class return ``d_max`` so that
    particles straddling the map edge are penalized rather than rejected.
    """
    x, y = point
    if class_id < 0 or class_id >= stack.class_count:
        return stack.d_max
    if x < 0 or y < 0 or x >= stack.width or y >= stack.height:
        return stack.d_max
    return float(stack.distances[class_id, y, x])


def build_cdf(side: int, profile: str = "linear") -> CenterDistanceField:
    """Radially symmetric center-weight grid for a ``side x side`` view.

    linear: ``max(0, 1 - r / (side/2))``; cosine: ``max(0, cos(pi*r/side))^2``
    with r the pixel's distance from the grid center.
    """
    if side < 1:
        raise ValueError("side must be >= 1")
    c = (side - 1) / 2.0
    coords = np.arange(side, dtype=np.float64) - c
    r = np.hypot(coords[:, None], coords[None, :])
    if profile == "linear":
        values = np.maximum(0.0, 1.0 - r / (side / 2.0))
    elif profile == "cosine":
        values = np.maximum(0.0, np.cos(np.pi * r / side)) ** 2
    else:
        raise ValueError(f"unknown CDF profile {profile!r}")
    return CenterDistanceField(values=values)


def flat_cdf(side: int) -> CenterDistanceField:
    """Uniform weights; used to ablate center weighting."""
    return CenterDistanceField(values=np.ones((side, side)))


def save_swdm(stack: DistanceFieldStack, path: str | Path) -> None:
    """Write the SWD1 cache: header then class-major little-endian f32."""
    header = _CACHE_HEADER.pack(
        SWDM_MAGIC, stack.width, stack.height, stack.class_count
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(stack.distances.astype("<f4", copy=False).tobytes())


def load_swdm(path: str | Path) -> DistanceFieldStack:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, width, height, class_count = _CACHE_HEADER.unpack_from(raw)
    if magic != SWDM_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    body = raw[_CACHE_HEADER.size :]
    expected = class_count * width * height * 4
    if len(body) != expected:
        raise MalformedFile(f"{path}: payload is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(class_count, height, width)
    return DistanceFieldStack(
        distances=data.copy(), d_max=map_diagonal_sentinel(width, height)
    )
