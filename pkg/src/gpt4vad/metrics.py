"""Threshold-free detection metrics: AU-ROC, AP, F1-max and AU-PRO.

Everything is computed from score groups: distinct score values (or
histogram bins) with their positive and negative counts, sorted from the
highest score down. Tied scores therefore always move together, and
AU-ROC gives tied pos/neg pairs half credit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

EXACT_LIMIT = 2**24
HIST_BINS = 16384

METRIC_COLUMNS = (
    "image_auroc",
    "image_ap",
    "image_f1_max",
    "pixel_auroc",
    "pixel_ap",
    "pixel_f1_max",
    "pixel_aupro",
)
COLUMN_TITLES = {
    "image_auroc": "Image AU-ROC",
    "image_ap": "Image AP",
    "image_f1_max": "Image F1-max",
    "pixel_auroc": "Pixel AU-ROC",
    "pixel_ap": "Pixel AP",
    "pixel_f1_max": "Pixel F1-max",
    "pixel_aupro": "Pixel AU-PRO",
}


class UndefinedMetricError(ValueError):
    pass


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y


def score_groups(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Positive and negative counts per distinct score, highest score first."""
    s, y = _as_arrays(scores, labels)
    values, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv, weights=y, minlength=len(values))
    tot = np.bincount(inv, minlength=len(values))
    return pos[::-1].astype(np.float64), (tot - pos)[::-1].astype(np.float64)


def histogram_groups(scores, labels, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`score_groups` but scores in [0, 1] are pooled into bins."""
    s, y = _as_arrays(scores, labels)
    idx = np.minimum((np.clip(s, 0.0, 1.0) * bins).astype(np.int64), bins - 1)
    pos = np.bincount(idx[y], minlength=bins)
    neg = np.bincount(idx[~y], minlength=bins)
    keep = (pos + neg) > 0
    return pos[keep][::-1].astype(np.float64), neg[keep][::-1].astype(np.float64)


def auroc_from_groups(pos: np.ndarray, neg: np.ndarray) -> float:
    P, N = pos.sum(), neg.sum()
    if P == 0 or N == 0:
        raise UndefinedMetricError("AU-ROC needs at least one positive and one negative")
    neg_below = N - np.cumsum(neg)
    return float(((pos * neg_below).sum() + 0.5 * (pos * neg).sum()) / (P * N))


def ap_from_groups(pos: np.ndarray, neg: np.ndarray) -> float:
    P = pos.sum()
    if P == 0:
        raise UndefinedMetricError("AP needs at least one positive")
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    precision = tp / (tp + fp)
    return float((pos / P * precision).sum())


def f1_max_from_groups(pos: np.ndarray, neg: np.ndarray) -> float:
    P = pos.sum()
    if P == 0:
        raise UndefinedMetricError("F1-max needs at least one positive")
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    return float((2 * tp / (tp + fp + P)).max())


def auroc(scores, labels) -> float:
    return auroc_from_groups(*score_groups(scores, labels))


def average_precision(scores, labels) -> float:
    return ap_from_groups(*score_groups(scores, labels))


def f1_max(scores, labels) -> float:
    return f1_max_from_groups(*score_groups(scores, labels))


def _stack(maps: Sequence, gts: Sequence) -> tuple[np.ndarray, np.ndarray]:
    if len(maps) != len(gts):
        raise ValueError(f"{len(maps)} maps but {len(gts)} masks")
    ms, gs = [], []
    for m, g in zip(maps, gts):
        m = np.asarray(getattr(m, "scores", m), dtype=np.float64)
        g = np.asarray(g) > 0
        if m.shape != g.shape:
            raise ValueError(f"map shape {m.shape} does not match mask shape {g.shape}")
        ms.append(m)
        gs.append(g)
    return ms, gs


def pixel_metrics(maps: Sequence, gts: Sequence, exact_limit: int = EXACT_LIMIT) -> dict[str, float]:
    """Pixel AU-ROC / AP / F1-max over every pixel of every map.

    Populations above ``exact_limit`` pixels are pooled into a
    ``HIST_BINS``-bin histogram; binning only merges scores closer than
    1/16384, which changes each metric by well under 1e-3.
    """
    ms, gs = _stack(maps, gts)
    s = np.concatenate([m.ravel() for m in ms]) if ms else np.zeros(0)
    y = np.concatenate([g.ravel() for g in gs]) if gs else np.zeros(0, dtype=bool)
    groups = score_groups(s, y) if s.size <= exact_limit else histogram_groups(s, y)
    return {
        "auroc": auroc_from_groups(*groups),
        "ap": ap_from_groups(*groups),
        "f1_max": f1_max_from_groups(*groups),
    }


EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ProCurve:
    fpr: np.ndarray
    pro: np.ndarray
    integration_limit: float = 0.3


def pro_curve(maps: Sequence, gts: Sequence, n_quantiles: int = 200,
              thresholds: np.ndarray | None = None) -> ProCurve:
    """Per-region overlap against false-positive rate.

    A pixel is predicted anomalous when its score is strictly above the
    threshold. Thresholds default to ``n_quantiles`` evenly spaced quantiles
    of all scores; the empty prediction (0, 0) is always on the curve.
    """
    ms, gs = _stack(maps, gts)
    comp_scores, comp_ids, neg_scores = [], [], []
    n_comp = 0
    for m, g in zip(ms, gs):
        lab, n = ndimage.label(g, structure=EIGHT)
        if n:
            comp_scores.append(m[g])
            comp_ids.append(lab[g] - 1 + n_comp)
            n_comp += n
        neg_scores.append(m[~g])
    if n_comp == 0:
        raise UndefinedMetricError("AU-PRO needs at least one ground-truth region")
    neg = np.sort(np.concatenate(neg_scores))
    if neg.size == 0:
        raise UndefinedMetricError("AU-PRO needs at least one normal pixel")
    cs = np.concatenate(comp_scores)
    ci = np.concatenate(comp_ids)
    comp_area = np.bincount(ci, minlength=n_comp).astype(np.float64)

    if thresholds is None:
        all_scores = np.concatenate([neg, cs])
        thresholds = np.unique(np.quantile(all_scores, np.linspace(0.0, 1.0, n_quantiles)))
    thresholds = np.asarray(thresholds, dtype=np.float64)

    fpr = (neg.size - np.searchsorted(neg, thresholds, side="right")) / neg.size
    order = np.argsort(cs, kind="stable")
    cs_sorted, ci_sorted = cs[order], ci[order]
    pro = np.empty(len(thresholds))
    for j, t in enumerate(thresholds):
        start = np.searchsorted(cs_sorted, t, side="right")
        hit = np.bincount(ci_sorted[start:], minlength=n_comp)
        pro[j] = np.mean(hit / comp_area)
    fpr = np.concatenate([[0.0], fpr])
    pro = np.concatenate([[0.0], pro])
    idx = np.lexsort((pro, fpr))
    return ProCurve(fpr[idx], pro[idx])


def integrate_pro(curve: ProCurve, limit: float = 0.3) -> float:
    """Normalised area under the PRO curve on ``[0, limit]``.

    The curve is linearly interpolated at ``limit``; if it never gets past
    ``limit`` its last PRO value is held constant up to it.
    """
    fpr, pro = curve.fpr, curve.pro
    inside = fpr <= limit
    x, y = fpr[inside], pro[inside]
    after = np.flatnonzero(~inside)
    if after.size:
        j = after[0]
        x0, y0, x1, y1 = fpr[j - 1], pro[j - 1], fpr[j], pro[j]
        y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
    else:
        y_lim = y[-1]
    x = np.append(x, limit)
    y = np.append(y, y_lim)
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    return area / limit


def aupro(maps: Sequence, gts: Sequence, limit: float = 0.3, n_quantiles: int = 200) -> float:
    return integrate_pro(pro_curve(maps, gts, n_quantiles), limit)


@dataclass
class EvalReport:
    """Per-category metric rows (fractions in [0, 1]) plus their average."""

    rows: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def average(self) -> dict[str, float]:
        if not self.rows:
            raise ValueError("report has no category rows")
        return {c: float(np.mean([r[c] for r in self.rows.values()])) for c in METRIC_COLUMNS}

    def table(self) -> list[dict[str, str]]:
        """Rows rendered as one-decimal percentages, Average last."""
        out = []
        for name, row in [*self.rows.items(), ("Average", self.average)]:
            rec = {"category": name}
            rec.update({c: _pct(row[c]) for c in METRIC_COLUMNS})
            out.append(rec)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=["category", *METRIC_COLUMNS], lineterminator="\n")
            w.writeheader()
            w.writerows(self.table())

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"columns": list(METRIC_COLUMNS), "rows": self.table()}, indent=2) + "\n",
                              encoding="utf-8")

    def to_text(self) -> str:
        head = ["Category"] + [COLUMN_TITLES[c] for c in METRIC_COLUMNS]
        lines = [" | ".join(head)]
        for rec in self.table():
            lines.append(" | ".join([rec["category"]] + [rec[c] for c in METRIC_COLUMNS]))
        return "\n".join(lines)


def _pct(x: float) -> str:
    return "nan" if np.isnan(x) else f"{100.0 * x:.1f}"


def aggregate(rows: dict[str, dict[str, float]]) -> EvalReport:
    if not rows:
        raise ValueError("need at least one category row")
    for name, row in rows.items():
        missing = set(METRIC_COLUMNS) - set(row)
        if missing:
            raise ValueError(f"row {name!r} lacks {sorted(missing)}")
    return EvalReport({k: {c: float(v[c]) for c in METRIC_COLUMNS} for k, v in rows.items()})


def category_row(image_scores, image_labels, maps, gts, limit: float = 0.3) -> dict[str, float]:
    """All seven metrics for one category; undefined metrics become NaN."""
    row: dict[str, float] = {}

    def safe(fn, *args):
        try:
            return fn(*args)
        except UndefinedMetricError:
            return float("nan")

    row["image_auroc"] = safe(auroc, image_scores, image_labels)
    row["image_ap"] = safe(average_precision, image_scores, image_labels)
    row["image_f1_max"] = safe(f1_max, image_scores, image_labels)
    try:
        px = pixel_metrics(maps, gts)
    except UndefinedMetricError:
        px = {"auroc": float("nan"), "ap": float("nan"), "f1_max": float("nan")}
    row["pixel_auroc"], row["pixel_ap"], row["pixel_f1_max"] = px["auroc"], px["ap"], px["f1_max"]
    row["pixel_aupro"] = safe(aupro, maps, gts, limit)
    return row
