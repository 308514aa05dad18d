"""Semantic label rasters: representation, file I/O, and geometric kernels.

Conventions used by every module in this package:

* ``labels`` is a ``(height, width)`` uint8 array, row-major. ``x`` indexes
  columns, ``y`` indexes rows, and y grows downward.
* Class ids are dense in ``[0, class_count)``. The value ``class_count``
  itself is the reserved OUT_OF_MAP label marking pixels outside coverage;
  it may appear in derived rasters (crops, rotations) but never in a raster
  loaded from disk.
* All resampling is nearest-neighbor (labels are categorical) with half-up
  rounding: ``floor(coord + 0.5)``.
* ``rotate_discard`` with a positive angle rotates content from the +x axis
  toward the +y axis (the positive orientation of the y-down image frame)
  and keeps only the centered square fully covered by the rotated image.
  Yaw angles elsewhere in the package follow the same orientation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LabelOutOfRange, MalformedFile

RASTER_MAGIC = b"SMR1"
_HEADER = struct.Struct("<4sIIHd")  # magic, width, height, class_count, m/px

# Grid sizes stay well under u32 but class ids must leave one value free
# for the OUT_OF_MAP sentinel in a uint8 payload.
MAX_CLASS_COUNT = 254


@dataclass(frozen=True)
class SemanticRaster:
    """Dense 2D grid of class labels plus geo-scale metadata.

    ``meters_per_pixel`` is 0 for observations that carry no ground scale.
    Instances are immutable; the label array is frozen after construction
    and safe to share across threads.
    """

    labels: np.ndarray
    class_count: int
    meters_per_pixel: float = 0.0

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("labels must be a non-empty 2D array")
        if not 1 <= self.class_count <= MAX_CLASS_COUNT:
            raise ValueError(f"class_count must be in [1, {MAX_CLASS_COUNT}]")
        if self.meters_per_pixel < 0:
            raise ValueError("meters_per_pixel must be >= 0")
        if int(arr.max()) > self.class_count:
            raise LabelOutOfRange(
                f"label {int(arr.max())} exceeds reserved id {self.class_count}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def out_of_map(self) -> int:
        """Reserved label for pixels outside map coverage."""
        return self.class_count

    def validate_labels(self) -> None:
        """Require every label < class_count (no OUT_OF_MAP pixels)."""
        top = int(self.labels.max())
        if top >= self.class_count:
            raise LabelOutOfRange(
                f"label {top} out of range for class_count {self.class_count}"
            )


@dataclass(frozen=True)
class ClassPalette:
    """Display names and RGB colors for each class id, dense from 0."""

    names: tuple[str, ...]
    colors: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.colors) or not self.names:
            raise ValueError("names and colors must be equal-length and non-empty")

    @property
    def class_count(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name {name!r}") from None


def save_raster(raster: SemanticRaster, path: str | Path) -> None:
    """Write the bit-exact SMR1 format (header + row-major label bytes)."""
    header = _HEADER.pack(
        RASTER_MAGIC,
        raster.width,
        raster.height,
        raster.class_count,
        raster.meters_per_pixel,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.labels.tobytes())


def load_raster(path: str | Path, allow_reserved: bool = False) -> SemanticRaster:
    """Read an SMR1 file, validating dimensions and label range.

    ``allow_reserved`` admits the OUT_OF_MAP value (= class_count), which
    persisted observation frames may carry; reference maps never should.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, width, height, class_count, mpp = _HEADER.unpack_from(raw)
    if magic != RASTER_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    if width == 0 or height == 0 or class_count == 0:
        raise MalformedFile(f"{path}: zero dimension in header")
    if class_count > MAX_CLASS_COUNT:
        raise MalformedFile(f"{path}: class_count {class_count} too large")
    body = raw[_HEADER.size :]
    if len(body) != width * height:
        raise MalformedFile(
            f"{path}: payload is {len(body)} bytes, expected {width * height}"
        )
    labels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    top_allowed = class_count if allow_reserved else class_count - 1
    if int(labels.max()) > top_allowed:
        raise LabelOutOfRange(
            f"{path}: label {int(labels.max())} out of range for "
            f"class_count {class_count}"
        )
    return SemanticRaster(labels=labels.copy(), class_count=class_count,
                          meters_per_pixel=mpp)


def save_palette(palette: ClassPalette, path: str | Path) -> None:
    """Write the optional human-readable palette ("id name r g b" lines)."""
    lines = [
        f"{i} {name} {r} {g} {b}"
        for i, (name, (r, g, b)) in enumerate(zip(palette.names, palette.colors))
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_palette(path: str | Path) -> ClassPalette:
    names: list[str] = []
    colors: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise MalformedFile(f"{path}:{lineno}: expected 'id name r g b'")
        idx = int(parts[0])
        if idx != len(names):
            raise MalformedFile(f"{path}:{lineno}: ids must be dense from 0")
        names.append(parts[1])
        colors.append((int(parts[2]), int(parts[3]), int(parts[4])))
    if not names:
        raise MalformedFile(f"{path}: empty palette")
    return ClassPalette(names=tuple(names), colors=tuple(colors))


def from_indexed_image(
    path: str | Path,
    meters_per_pixel: float = 0.0,
    class_count: int | None = None,
) -> SemanticRaster:
    """Import an 8-bit indexed-color image; palette index becomes class id."""
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "P":
            raise MalformedFile(f"{path}: not an indexed-color image ({img.mode})")
        labels = np.asarray(img, dtype=np.uint8)
    top = int(labels.max())
    if class_count is None:
        class_count = top + 1
    elif top >= class_count:
        raise LabelOutOfRange(
            f"{path}: index {top} out of range for class_count {class_count}"
        )
    return SemanticRaster(labels=labels, class_count=class_count,
                          meters_per_pixel=meters_per_pixel)


def crop_window(
    raster: SemanticRaster, center: tuple[int, int], side: int
) -> SemanticRaster:
    """Extract a ``side x side`` window centered at ``center`` = (x, y) pixels.

    Source index along each axis is ``center - side//2 + k``; pixels outside
    the raster are filled with the OUT_OF_MAP label.
    """
    if side < 1:
        raise ValueError("side must be >= 1")
    cx, cy = int(center[0]), int(center[1])
    x0 = cx - side // 2
    y0 = cy - side // 2
    out = np.full((side, side), raster.out_of_map, dtype=np.uint8)
    sy0, sy1 = max(y0, 0), min(y0 + side, raster.height)
    sx0, sx1 = max(x0, 0), min(x0 + side, raster.width)
    if sy0 < sy1 and sx0 < sx1:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = raster.labels[
            sy0:sy1, sx0:sx1
        ]
    return SemanticRaster(labels=out, class_count=raster.class_count,
                          meters_per_pixel=raster.meters_per_pixel)


def _nearest_indices(src_len: int, dst_len: int) -> np.ndarray:
    # pixel-center mapping: src = floor((k + 0.5) * src_len / dst_len);
    # multiply before dividing so composed geometry is bit-reproducible
    idx = ((np.arange(dst_len) + 0.5) * src_len / dst_len).astype(np.int64)
    return np.clip(idx, 0, src_len - 1)


def resize_nearest(raster: SemanticRaster, target: int) -> SemanticRaster:
    """Nearest-neighbor resample to ``target x target`` pixels."""
    if target < 1:
        raise ValueError("target must be >= 1")
    rows = _nearest_indices(raster.height, target)
    cols = _nearest_indices(raster.width, target)
    out = raster.labels[np.ix_(rows, cols)]
    if raster.meters_per_pixel > 0:
        mpp = raster.meters_per_pixel * raster.width / target
    else:
        mpp = 0.0
    return SemanticRaster(labels=out, class_count=raster.class_count,
                          meters_per_pixel=mpp)


def _sin_cos(angle_deg: float) -> tuple[float, float]:
    # exact values at quarter turns so e.g. sin(pi) noise never shrinks the
    # retained square below the full side
    a = angle_deg % 360.0
    quarters = {0.0: (0.0, 1.0), 90.0: (1.0, 0.0),
                180.0: (0.0, -1.0), 270.0: (-1.0, 0.0)}
    if a in quarters:
        return quarters[a]
    rad = math.radians(a)
    return math.sin(rad), math.cos(rad)


def rotated_side(side: int, angle_deg: float) -> int:
    """Side of the centered square fully covered after rotating a square image."""
    sin_a, cos_a = _sin_cos(angle_deg)
    denom = abs(sin_a) + abs(cos_a)
    return max(1, int(math.floor(side / denom)))


def rotate_discard(raster: SemanticRaster, angle_deg: float) -> SemanticRaster:
    """Rotate a square raster about its center and crop to the covered square.

    Output side is ``floor(side / (|sin a| + |cos a|))``, which inscribes the
    output in the rotated image, so rotation never introduces OUT_OF_MAP
    pixels. Sampling is nearest-neighbor on the inverse map with half-up
    rounding; pixel centers sit at integer coordinates, image center at
    ``(side - 1) / 2``.
    """
    if raster.width != raster.height:
        raise ValueError("rotate_discard requires a square raster")
    side = raster.width
    out_side = rotated_side(side, angle_deg)
    sin_a, cos_a = _sin_cos(angle_deg)
    c_src = (side - 1) / 2.0
    c_dst = (out_side - 1) / 2.0

    du = np.arange(out_side) - c_dst  # x offsets (columns)
    dv = du  # square output, same offsets for rows
    uu, vv = np.meshgrid(du, dv)  # uu: x offset, vv: y offset per output pixel
    src_x = np.floor(cos_a * uu - sin_a * vv + c_src + 0.5).astype(np.int64)
    src_y = np.floor(sin_a * uu + cos_a * vv + c_src + 0.5).astype(np.int64)
    np.clip(src_x, 0, side - 1, out=src_x)
    np.clip(src_y, 0, side - 1, out=src_y)
    out = raster.labels[src_y, src_x]
    return SemanticRaster(labels=out, class_count=raster.class_count,
                          meters_per_pixel=raster.meters_per_pixel)
