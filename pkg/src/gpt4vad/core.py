"""Shared domain types: images, region maps, region scores and anomaly maps.

All types are immutable once built. Arrays handed to the constructors are
copied and marked read-only so instances can be shared between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

WORKING_SIZE = 768


class InvalidInputError(ValueError):
    """Raised when an operation receives structurally invalid input."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An 8-bit RGB raster stored as an ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = np.repeat(px[:, :, None], 3, axis=2)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidInputError(f"expected an (H, W, 3) array, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise InvalidInputError("image has a zero dimension")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) or px.min() < 0 or px.max() > 255:
                raise InvalidInputError(f"pixels must be uint8, got {px.dtype}")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    @classmethod
    def open(cls, path: str | Path) -> "ImageBuffer":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB")))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    def to_png_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        # fixed settings keep the encoding (and thus query digests) stable
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
        return buf.getvalue()


@dataclass(frozen=True)
class RegionRecord:
    id: int
    area: int
    bbox: tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y), inclusive
    label_anchor: tuple[int, int]  # (x, y)


@dataclass(frozen=True, eq=False)
class RegionMap:
    """Per-pixel region ids (0 = background) plus one record per region.

    Build instances with :meth:`from_labels`, which relabels ids contiguously
    and computes the region records.
    """

    labels: np.ndarray
    regions: tuple[RegionRecord, ...] = field(default=())

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.shape[0] == 0 or lab.shape[1] == 0:
            raise InvalidInputError(f"labels must be a non-empty 2-D array, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise InvalidInputError("labels must be integer valued")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.int32)))
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.regions]

    def __len__(self) -> int:
        return len(self.regions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegionMap):
            return NotImplemented
        return self.regions == other.regions and np.array_equal(self.labels, other.labels)

    def region(self, region_id: int) -> RegionRecord:
        return self.regions[region_id - 1]

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "RegionMap":
        """Renumber nonzero labels to ``1..K`` preserving their relative order
        and compute each region's record."""
        lab = np.asarray(labels)
        if lab.ndim != 2:
            raise InvalidInputError(f"labels must be 2-D, got shape {lab.shape}")
        if lab.size and lab.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        values, inverse = np.unique(lab.ravel(), return_inverse=True)
        if values[0] != 0:
            inverse = inverse + 1
        new = inverse.reshape(lab.shape).astype(np.int32)
        return cls(new, compute_records(new))

    def to_png(self, path: str | Path) -> None:
        if len(self.regions) > 65535:
            raise InvalidInputError("too many regions for a 16-bit PNG")
        Image.fromarray(self.labels.astype(np.uint16)).save(path, format="PNG")

    @classmethod
    def from_png(cls, path: str | Path) -> "RegionMap":
        with Image.open(path) as im:
            return cls.from_labels(np.asarray(im).astype(np.int64))


def compute_records(labels: np.ndarray) -> tuple[RegionRecord, ...]:
    """Region records for a contiguously labelled raster."""
    from scipy import ndimage

    from .regionize import label_anchor

    k = int(labels.max(initial=0))
    if k == 0:
        return ()
    areas = np.bincount(labels.ravel(), minlength=k + 1)
    records = []
    for rid, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            raise InvalidInputError(f"region id {rid} has no pixels; ids must be contiguous")
        mask = labels[sl] == rid
        ax, ay = label_anchor(mask)
        y0, x0 = sl[0].start, sl[1].start
        bbox = (x0, y0, sl[1].stop - 1, sl[0].stop - 1)
        records.append(RegionRecord(rid, int(areas[rid]), bbox, (x0 + ax, y0 + ay)))
    return tuple(records)


@dataclass(frozen=True)
class RegionScores:
    """Mapping of region id to anomaly score in [0, 1]."""

    entries: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for k, v in sorted(self.entries.items()):
            k = int(k)
            if k < 1:
                raise InvalidInputError(f"region ids are positive, got {k}")
            clean[k] = min(1.0, max(0.0, float(v)))
        object.__setattr__(self, "entries", clean)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: int) -> float:
        return self.entries[key]

    def __contains__(self, key: object) -> bool:
        return key in self.entries

    def items(self):
        return self.entries.items()

    def to_json_dict(self) -> dict[str, float]:
        return {str(k): v for k, v in self.entries.items()}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, float]) -> "RegionScores":
        return cls({int(k): float(v) for k, v in data.items()})


@dataclass(frozen=True, eq=False)
class AnomalyMap:
    """Per-pixel anomaly scores in [0, 1] as a float64 ``(H, W)`` array."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise InvalidInputError(f"scores must be 2-D, got shape {s.shape}")
        if s.size and (np.isnan(s).any() or s.min() < 0.0 or s.max() > 1.0):
            raise InvalidInputError("anomaly scores must lie in [0, 1]")
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnomalyMap):
            return NotImplemented
        return np.array_equal(self.scores, other.scores)

    def to_png(self, path: str | Path) -> None:
        q = np.round(self.scores * 65535.0).astype(np.uint16)
        Image.fromarray(q).save(path, format="PNG")

    @classmethod
    def from_png(cls, path: str | Path) -> "AnomalyMap":
        with Image.open(path) as im:
            return cls(np.asarray(im).astype(np.float64) / 65535.0)


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    category: str
    is_anomalous: bool
    mask_path: Path | None = None

    def load_mask(self, shape: tuple[int, int] | None = None) -> np.ndarray:
        """Binary GT mask; all-zero for samples without a mask file."""
        if self.mask_path is None:
            if shape is None:
                with Image.open(self.image_path) as im:
                    shape = (im.height, im.width)
            return np.zeros(shape, dtype=bool)
        return read_mask(self.mask_path)


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def resize_to_working(img: ImageBuffer, size: int = WORKING_SIZE) -> ImageBuffer:
    """Stretch ``img`` to ``size x size`` with bilinear interpolation.

    Sample positions use pixel-center alignment; an input already at the
    target size is returned unchanged.
    """
    if size <= 0:
        raise InvalidInputError(f"size must be positive, got {size}")
    h, w = img.height, img.width
    if h == size and w == size:
        return img
    src = img.pixels.astype(np.float64)

    def coords(n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h)
    x0, x1, fx = coords(w)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    out = top * (1 - fy) + bottom * fy
    return ImageBuffer(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_mask_nearest(mask: np.ndarray, size: int | tuple[int, int] = WORKING_SIZE) -> np.ndarray:
    """Nearest-neighbour resample of a binary mask; ``size`` is a side length
    or an ``(height, width)`` pair."""
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise InvalidInputError(f"mask must be a non-empty 2-D array, got shape {m.shape}")
    oh, ow = (size, size) if isinstance(size, int) else size
    if oh <= 0 or ow <= 0:
        raise InvalidInputError(f"size must be positive, got {size}")
    h, w = m.shape
    ys = np.minimum((np.arange(oh) * h) // oh, h - 1)
    xs = np.minimum((np.arange(ow) * w) // ow, w - 1)
    return m[ys][:, xs] > 0
