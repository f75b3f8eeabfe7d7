"""Built-in 5x7 bitmap digits used to stamp region numbers on overlays."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

GLYPH_W, GLYPH_H = 5, 7

_FONT = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

GLYPHS = {ch: np.array([[c == "1" for c in row] for row in rows]) for ch, rows in _FONT.items()}


def text_bitmap(text: str, scale: int = 1) -> np.ndarray:
    """Boolean bitmap of ``text`` (digits only), one blank column between glyphs."""
    if not text or any(ch not in GLYPHS for ch in text):
        raise ValueError(f"only digits can be rendered, got {text!r}")
    cols = []
    for i, ch in enumerate(text):
        if i:
            cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        cols.append(GLYPHS[ch])
    bmp = np.hstack(cols)
    if scale > 1:
        bmp = np.kron(bmp, np.ones((scale, scale), dtype=bool))
    return bmp


def stamp_masks(
    text: str, center: tuple[int, int], shape: tuple[int, int], scale: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Foreground and halo masks of ``text`` centred on ``center=(x, y)``
    inside a raster of ``shape``; parts falling off the raster are dropped."""
    bmp = np.pad(text_bitmap(text, scale), 1)
    halo = ndimage.binary_dilation(bmp, structure=np.ones((3, 3), dtype=bool)) & ~bmp
    bh, bw = bmp.shape
    x0 = center[0] - bw // 2
    y0 = center[1] - bh // 2
    fg = np.zeros(shape, dtype=bool)
    hl = np.zeros(shape, dtype=bool)
    ys0, xs0 = max(0, y0), max(0, x0)
    ys1, xs1 = min(shape[0], y0 + bh), min(shape[1], x0 + bw)
    if ys0 >= ys1 or xs0 >= xs1:
        return fg, hl
    src = (slice(ys0 - y0, ys1 - y0), slice(xs0 - x0, xs1 - x0))
    fg[ys0:ys1, xs0:xs1] = bmp[src]
    hl[ys0:ys1, xs0:xs1] = halo[src]
    return fg, hl
