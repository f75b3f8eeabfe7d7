"""Granular region division and set-of-mark overlays.

An image is partitioned into numbered regions (grid cells, SLIC superpixels
or externally produced masks), regions outside an area band are dropped,
and the survivors are outlined and numbered on a copy of the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.measure import label as cc_label

from .core import ImageBuffer, InvalidInputError, RegionMap
from .glyphs import stamp_masks
from .superpixel import enforce_connectivity, slic_segment

METHODS = ("grid", "superpixel", "imported")


@dataclass(frozen=True)
class DivisionConfig:
    method: str = "superpixel"
    grid_rows: int = 8
    grid_cols: int = 8
    slic_segments: int = 60
    slic_compactness: float = 20.0
    slic_iterations: int = 10
    min_area: int = 600
    max_area: int = 120_000
    border_color: tuple[int, int, int] = (255, 255, 255)
    glyph_scale: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.min_area >= self.max_area:
            raise InvalidInputError("min_area must be smaller than max_area")
        if self.slic_segments < 2:
            raise InvalidInputError("slic_segments must be at least 2")
        if self.slic_compactness <= 0:
            raise InvalidInputError("slic_compactness must be positive")
        if self.grid_rows < 1 or self.grid_cols < 1 or self.slic_iterations < 1 or self.glyph_scale < 1:
            raise InvalidInputError("counts must be positive")
        object.__setattr__(self, "border_color", tuple(int(c) for c in self.border_color))


def _splits(total: int, parts: int) -> np.ndarray:
    # the remainder goes to the trailing cells, one extra pixel each
    base, rem = divmod(total, parts)
    sizes = np.full(parts, base)
    if rem:
        sizes[-rem:] += 1
    return np.repeat(np.arange(parts), sizes)


def grid_divide(width: int, height: int, rows: int, cols: int) -> RegionMap:
    """Tile the frame into ``rows x cols`` rectangles, ids row-major from 1."""
    if rows < 1 or cols < 1 or rows > height or cols > width:
        raise InvalidInputError(f"cannot cut a {width}x{height} frame into {rows}x{cols} cells")
    r = _splits(height, rows)
    c = _splits(width, cols)
    return RegionMap.from_labels(r[:, None] * cols + c[None, :] + 1)


def slic_divide(img: ImageBuffer, cfg: DivisionConfig = DivisionConfig()) -> RegionMap:
    if cfg.slic_segments > img.width * img.height:
        raise InvalidInputError("more segments requested than pixels available")
    raw, _ = slic_segment(img.pixels, cfg.slic_segments, cfg.slic_compactness, cfg.slic_iterations)
    return RegionMap.from_labels(enforce_connectivity(raw))


def import_regions(masks: Sequence[np.ndarray], shape: tuple[int, int] | None = None) -> RegionMap:
    """Rasterise binary masks in order (later masks win on overlap).

    Every 4-connected piece of the result becomes its own region, so a mask
    with several blobs, or one cut in two by a later mask, yields several
    regions. ``shape`` is required when ``masks`` is empty.
    """
    if not masks:
        if shape is None:
            raise InvalidInputError("shape is required for an empty mask list")
        return RegionMap.from_labels(np.zeros(shape, dtype=np.int32))
    shape = shape or np.asarray(masks[0]).shape
    raster = np.zeros(shape, dtype=np.int64)
    for i, m in enumerate(masks, start=1):
        m = np.asarray(m)
        if m.shape != tuple(shape):
            raise InvalidInputError(f"mask {i - 1} has shape {m.shape}, expected {tuple(shape)}")
        raster[m > 0] = i
    comps = cc_label(raster, connectivity=1, background=0)
    n = int(comps.max())
    if n == 0:
        return RegionMap.from_labels(np.zeros(shape, dtype=np.int32))
    flat = comps.ravel()
    first = np.full(n + 1, flat.size, dtype=np.intp)
    np.minimum.at(first, flat, np.arange(flat.size))
    src = raster.ravel()[first[1:]]
    # order pieces by source mask, then by position
    order = np.lexsort((first[1:], src))
    rank = np.zeros(n + 1, dtype=np.int32)
    rank[order + 1] = np.arange(1, n + 1)
    return RegionMap.from_labels(rank[comps])


def filter_regions(rm: RegionMap, min_area: int = 600, max_area: int = 120_000) -> RegionMap:
    """Drop regions whose area falls outside ``[min_area, max_area]``."""
    areas = np.array([0] + [r.area for r in rm.regions])
    keep = (areas >= min_area) & (areas <= max_area)
    keep[0] = False
    if keep[1:].all():
        return rm
    lut = np.zeros(len(areas), dtype=np.int32)
    lut[keep] = np.arange(1, int(keep.sum()) + 1)
    return RegionMap.from_labels(lut[rm.labels])


def label_anchor(mask: np.ndarray) -> tuple[int, int]:
    """``(x, y)`` of the pixel deepest inside ``mask`` by city-block distance
    to the nearest outside pixel; ties go to the smallest ``(y, x)``."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise InvalidInputError("cannot anchor an empty region")
    dt = ndimage.distance_transform_cdt(np.pad(m, 1), metric="taxicab")[1:-1, 1:-1]
    y, x = np.unravel_index(np.argmax(dt), dt.shape)
    return int(x), int(y)


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Region pixels touching a differently labelled 4-neighbour or the frame edge."""
    lab = np.asarray(labels)
    edge = np.zeros(lab.shape, dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    dh = lab[:, 1:] != lab[:, :-1]
    dv = lab[1:, :] != lab[:-1, :]
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh
    edge[1:, :] |= dv
    edge[:-1, :] |= dv
    return edge & (lab != 0)


def render_overlay(
    img: ImageBuffer,
    rm: RegionMap,
    cfg: DivisionConfig = DivisionConfig(),
    numbers: bool = True,
) -> ImageBuffer:
    """Outline every region in ``cfg.border_color`` and stamp its id.

    Numbers are black on a white halo, centred on the region's label anchor
    and clipped to its bounding box.
    """
    if (img.height, img.width) != rm.shape:
        raise InvalidInputError(f"image is {img.width}x{img.height} but region map is {rm.width}x{rm.height}")
    if not rm.regions:
        return img
    out = np.array(img.pixels)
    out[boundary_mask(rm.labels)] = cfg.border_color
    if numbers:
        for r in rm.regions:
            x0, y0, x1, y1 = r.bbox
            box = (y1 - y0 + 1, x1 - x0 + 1)
            anchor = (r.label_anchor[0] - x0, r.label_anchor[1] - y0)
            fg, halo = stamp_masks(str(r.id), anchor, box, cfg.glyph_scale)
            window = out[y0 : y1 + 1, x0 : x1 + 1]
            window[halo] = 255
            window[fg] = 0
    return ImageBuffer(out)


def divide(
    img: ImageBuffer,
    cfg: DivisionConfig = DivisionConfig(),
    masks: Sequence[np.ndarray] | None = None,
) -> RegionMap:
    """Region division by ``cfg.method`` followed by area filtering."""
    if cfg.method == "grid":
        rm = grid_divide(img.width, img.height, cfg.grid_rows, cfg.grid_cols)
    elif cfg.method == "superpixel":
        rm = slic_divide(img, cfg)
    else:
        if masks is None:
            raise InvalidInputError("imported division needs region masks")
        rm = import_regions(list(masks), (img.height, img.width))
    return filter_regions(rm, cfg.min_area, cfg.max_area)
