"""SLIC superpixels in CIELAB space.

Plain k-means restricted to a 2S x 2S window around each center, with the
pixel's current center always kept as a candidate so the clustering energy
never increases between iterations. Connectivity is enforced afterwards by
merging orphan fragments into their largest 4-adjacent neighbour.
"""

from __future__ import annotations

import math

import numpy as np
from skimage.color import rgb2lab
from skimage.measure import label as cc_label

from .core import InvalidInputError


def grid_centers(height: int, width: int, n_segments: int) -> np.ndarray:
    """Initial ``(y, x)`` centers on a regular grid of roughly ``n_segments`` cells."""
    ny = max(1, min(height, int(round(math.sqrt(n_segments * height / width)))))
    nx = max(1, min(width, int(round(n_segments / ny))))
    ys = (np.arange(ny) + 0.5) * (height / ny)
    xs = (np.arange(nx) + 0.5) * (width / nx)
    yy, xx = np.meshgrid(np.floor(ys), np.floor(xs), indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (gx**2).sum(axis=2) + (gy**2).sum(axis=2)


def _perturb(centers: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Move each center to the lowest-gradient pixel of its 3x3 neighbourhood;
    a center only moves on a strictly lower gradient."""
    h, w = grad.shape
    out = centers.copy()
    for i, (y, x) in enumerate(centers.astype(int)):
        best = grad[y, x]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best:
                    best = grad[yy, xx]
                    out[i] = (yy, xx)
    return out


def slic_segment(
    pixels: np.ndarray,
    n_segments: int = 60,
    compactness: float = 20.0,
    iterations: int = 10,
) -> tuple[np.ndarray, list[float]]:
    """Run windowed SLIC on an ``(H, W, 3)`` uint8 image.

    Returns the raw cluster labels (before connectivity enforcement, values
    ``0..k-1``) and the clustering energy sum(D^2) measured after every
    assign+update iteration.
    """
    h, w = pixels.shape[:2]
    n = h * w
    if n_segments < 1 or n_segments > n:
        raise InvalidInputError(f"n_segments must be in [1, {n}], got {n_segments}")
    if compactness <= 0:
        raise InvalidInputError("compactness must be positive")

    lab = rgb2lab(pixels)
    step = math.sqrt(n / n_segments)
    wxy = (compactness / step) ** 2

    yx = _perturb(grid_centers(h, w, n_segments), _gradient(lab))
    iy, ix = yx[:, 0].astype(int), yx[:, 1].astype(int)
    centers = np.concatenate([lab[iy, ix], yx], axis=1)
    k = len(centers)

    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    flat_lab = lab.reshape(-1, 3)
    flat_y = np.repeat(ys, w)
    flat_x = np.tile(xs, h)

    feats = np.column_stack([flat_lab, flat_y, flat_x])

    labels = np.full((h, w), -1, dtype=np.intp)
    radius = step
    energies: list[float] = []
    own = np.full((h, w), np.inf)  # distance of each pixel to its current center

    def distance_to_own(lbl: np.ndarray) -> np.ndarray:
        c = centers[lbl.ravel()]
        d = ((flat_lab - c[:, :3]) ** 2).sum(axis=1)
        d += ((flat_y - c[:, 3]) ** 2 + (flat_x - c[:, 4]) ** 2) * wxy
        return d.reshape(h, w)

    for _ in range(iterations):
        dist = own
        for i in range(k):
            cl, ca, cb, cy, cx = centers[i]
            y0, y1 = max(0, int(cy - radius)), min(h, int(cy + radius) + 1)
            x0, x1 = max(0, int(cx - radius)), min(w, int(cx + radius) + 1)
            win = lab[y0:y1, x0:x1]
            d = (win[..., 0] - cl) ** 2 + (win[..., 1] - ca) ** 2 + (win[..., 2] - cb) ** 2
            d += (((ys[y0:y1] - cy) ** 2)[:, None] + ((xs[x0:x1] - cx) ** 2)[None, :]) * wxy
            sub = dist[y0:y1, x0:x1]
            better = d < sub
            sub[better] = d[better]
            labels[y0:y1, x0:x1][better] = i
        missing = labels < 0
        if missing.any():
            # pixels outside every window on the first pass: nearest center globally
            pts = np.argwhere(missing)
            pl = lab[missing]
            d = ((pl[:, None, :] - centers[None, :, :3]) ** 2).sum(axis=2)
            d += ((pts[:, None, 0] - centers[None, :, 3]) ** 2 + (pts[:, None, 1] - centers[None, :, 4]) ** 2) * wxy
            labels[missing] = np.argmin(d, axis=1)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k)
        sums = np.stack([np.bincount(flat, weights=feats[:, j], minlength=k) for j in range(5)], axis=1)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        own = distance_to_own(labels)
        energies.append(float(own.sum()))

    return labels, energies


def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Relabel every 4-connected fragment that is not the largest piece of
    its cluster into the largest adjacent region.

    Returns a raster of merged-group ids ``1..G`` in first-appearance order.
    """
    h, w = labels.shape
    comp = cc_label(labels + 1, connectivity=1, background=0)
    n = int(comp.max())
    flat = comp.ravel()
    sizes = np.bincount(flat, minlength=n + 1)
    first = np.full(n + 1, flat.size, dtype=np.intp)
    np.minimum.at(first, flat, np.arange(flat.size))
    cluster_of = labels.ravel()[first[1:]]

    # largest fragment per cluster survives; ties go to the earliest fragment
    order = np.lexsort((np.arange(1, n + 1), -sizes[1:], cluster_of))
    main = np.zeros(n + 1, dtype=bool)
    seen = set()
    for idx in order:
        c = cluster_of[idx]
        if c not in seen:
            seen.add(c)
            main[idx + 1] = True

    pairs = np.concatenate(
        [
            np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1),
            np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1),
        ]
    )
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    neighbours: dict[int, set[int]] = {i: set() for i in range(1, n + 1)}
    for a, b in pairs:
        neighbours[int(a)].add(int(b))
        neighbours[int(b)].add(int(a))

    parent = list(range(n + 1))
    group_size = sizes.astype(np.int64).copy()
    members: dict[int, list[int]] = {i: [i] for i in range(1, n + 1)}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    orphans = [i for i in range(1, n + 1) if not main[i]]
    orphans.sort(key=lambda i: (sizes[i], i))
    for o in orphans:
        root = find(o)
        best, best_size = None, -1
        for m in members[root]:
            for nb in neighbours[m]:
                r = find(nb)
                if r != root and (group_size[r] > best_size or (group_size[r] == best_size and r < best)):
                    best, best_size = r, group_size[r]
        if best is None:
            continue
        parent[root] = best
        group_size[best] += group_size[root]
        members[best].extend(members.pop(root))

    roots = np.array([0] + [find(i) for i in range(1, n + 1)])
    grouped = roots[comp]
    values, firsts = np.unique(grouped.ravel(), return_index=True)
    rank = np.empty(len(values), dtype=np.int32)
    rank[np.argsort(firsts, kind="stable")] = np.arange(1, len(values) + 1)
    return rank[np.searchsorted(values, grouped)].astype(np.int32)
