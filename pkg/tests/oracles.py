"""Slow, obviously-correct reference implementations used only by tests.

Nothing here imports the code under test's metric or segmentation paths.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np


def brute_auroc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def brute_ap(scores, labels) -> float:
    """Sum of (recall step x precision) over cut points at each distinct score."""
    P = sum(1 for y in labels if y)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        recall = tp / P
        ap += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return ap


def brute_f1_max(scores, labels) -> float:
    P = sum(1 for y in labels if y)
    best = 0.0
    for t in set(scores):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        fn = P - tp
        if tp:
            best = max(best, 2 * tp / (2 * tp + fp + fn))
    return best


def flood_components(mask: np.ndarray, eight: bool) -> list[list[tuple[int, int]]]:
    """Connected components by breadth-first flood fill."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if eight:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                comp, q = [], deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.append((cy, cx))
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                comps.append(comp)
    return comps


def dense_aupro(maps, gts, limit: float = 0.3, n_thresholds: int = 1000) -> float:
    """PRO curve on evenly spaced thresholds, prediction = score > t, with
    per-threshold loops over every GT component."""
    comps = []
    neg_scores = []
    for m, g in zip(maps, gts):
        for comp in flood_components(g, eight=True):
            ys, xs = zip(*comp)
            comps.append(m[list(ys), list(xs)])
        neg_scores.append(m[~g])
    neg = np.concatenate(neg_scores)
    lo = min(float(m.min()) for m in maps)
    hi = max(float(m.max()) for m in maps)
    pts = [(0.0, 0.0)]
    for t in np.linspace(lo, hi, n_thresholds):
        fpr = float((neg > t).sum()) / neg.size
        pro = float(np.mean([(c > t).sum() / c.size for c in comps]))
        pts.append((fpr, pro))
    pts.sort()
    area, prev = 0.0, pts[0]
    for x, y in pts[1:]:
        if x > limit:
            y_lim = prev[1] + (y - prev[1]) * (limit - prev[0]) / (x - prev[0])
            area += (limit - prev[0]) * (prev[1] + y_lim) / 2
            return area / limit
        area += (x - prev[0]) * (prev[1] + y) / 2
        prev = (x, y)
    area += (limit - prev[0]) * prev[1]
    return area / limit


def brute_distance_transform(mask: np.ndarray) -> np.ndarray:
    """City-block distance from each region pixel to the nearest pixel
    outside the region (the frame exterior counts as outside)."""
    h, w = mask.shape
    outside = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1)
               if not (0 <= y < h and 0 <= x < w) or not mask[y, x]]
    dt = np.zeros(mask.shape, dtype=int)
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                dt[y, x] = min(abs(y - oy) + abs(x - ox) for oy, ox in outside)
    return dt


def global_kmeans_slic(lab: np.ndarray, centers: np.ndarray, compactness: float, step: float,
                       iterations: int) -> np.ndarray:
    """SLIC without the search window: every pixel compares against every center."""
    h, w = lab.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    feats = np.column_stack([lab.reshape(-1, 3), yy.ravel(), xx.ravel()]).astype(np.float64)
    scale = np.array([1, 1, 1, compactness / step, compactness / step])
    c = centers.astype(np.float64).copy()
    labels = None
    for _ in range(iterations):
        d = (((feats[:, None, :] - c[None, :, :]) * scale) ** 2).sum(axis=2)
        labels = d.argmin(axis=1)
        for k in range(len(c)):
            sel = labels == k
            if sel.any():
                c[k] = feats[sel].mean(axis=0)
    return labels.reshape(h, w)


def bilinear_reference(img: np.ndarray, size: int, points) -> list[np.ndarray]:
    """Bilinear samples with half-pixel centers at output ``(y, x)`` points."""
    h, w = img.shape[:2]
    out = []
    for oy, ox in points:
        sy = min(max((oy + 0.5) * h / size - 0.5, 0.0), h - 1)
        sx = min(max((ox + 0.5) * w / size - 0.5, 0.0), w - 1)
        y0, x0 = int(math.floor(sy)), int(math.floor(sx))
        y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
        fy, fx = sy - y0, sx - x0
        out.append((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                   + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out
