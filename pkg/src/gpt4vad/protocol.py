"""Prompt construction and text-to-segmentation parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Collection, Iterable

import numpy as np

from .core import AnomalyMap, ImageBuffer, InvalidInputError, RegionMap, RegionScores

PROMPT_TEMPLATE = (
    "This is an image of {category}. The image has different region divisions, each distinguished by "
    "white edges and each with a unique numerical identifier within the region, starting from 1. Each "
    "region may exhibit anomalies of unknown types, and anomaly scores range from 0 to 1, with higher "
    "values indicating a higher probability of an anomaly. Please output the anomaly scores for the "
    "regions with anomalies. Provide the answer in the following format: “region 1: 0.9; region 3: "
    '0.7.". Ignore the region that does not contain anomalies.'
)


@dataclass(frozen=True)
class PromptBundle:
    category: str
    prompt_text: str
    fused_image: ImageBuffer


def build_prompt(category: str) -> str:
    if not category or not category.strip():
        raise InvalidInputError("category must be non-empty")
    return PROMPT_TEMPLATE.format(category=category)


def make_bundle(category: str, fused_image: ImageBuffer) -> PromptBundle:
    return PromptBundle(category, build_prompt(category), fused_image)


_BULLET = re.compile(r"^[ \t]*(?:[-+•]|\d+[.)])[ \t]+", re.MULTILINE)
_DECOR = re.compile(r"[*_`#]")
_SCORE = re.compile(
    r"region\s+(\d+)\s*[:=-]\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)",
    re.IGNORECASE,
)


def strip_decoration(text: str) -> str:
    return _DECOR.sub("", _BULLET.sub("", text))


def parse_region_scores(
    text: str | bytes, rm: RegionMap | Collection[int] | None = None
) -> tuple[RegionScores, list[str]]:
    """Extract ``region <id>: <score>`` pairs from free text.

    ``rm`` restricts accepted ids (a region map or a collection of ids);
    ``None`` accepts any positive id. Never raises: scores are clamped to
    [0, 1], unknown ids are dropped and duplicates keep their maximum, each
    with a warning.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    if isinstance(rm, RegionMap):
        allowed: Collection[int] | None = set(rm.ids)
    else:
        allowed = None if rm is None else set(rm)

    warnings: list[str] = []
    scores: dict[int, float] = {}
    for m in _SCORE.finditer(strip_decoration(text)):
        rid = int(m.group(1))
        try:
            value = float(m.group(2))
        except ValueError:
            warnings.append(f"unreadable score {m.group(2)!r} for region {rid}")
            continue
        if not np.isfinite(value):
            warnings.append(f"non-finite score for region {rid} ignored")
            continue
        if value < 0.0 or value > 1.0:
            clamped = min(1.0, max(0.0, value))
            warnings.append(f"region {rid}: score {value} clamped to {clamped}")
            value = clamped
        if rid < 1 or (allowed is not None and rid not in allowed):
            warnings.append(f"region {rid} does not exist; dropped")
            continue
        if rid in scores:
            warnings.append(f"region {rid} scored more than once; keeping the maximum")
            value = max(value, scores[rid])
        scores[rid] = value
    return RegionScores(scores), warnings


def format_region_scores(rs: RegionScores) -> str:
    return "; ".join(f"region {k}: {v!r}" for k, v in rs.items())


def scores_to_anomaly_map(rm: RegionMap, rs: RegionScores) -> AnomalyMap:
    """Paint each region with its score; unscored regions and background get 0."""
    lut = np.zeros(len(rm.regions) + 1, dtype=np.float64)
    for rid, s in rs.items():
        if not 1 <= rid <= len(rm.regions):
            raise InvalidInputError(f"score for unknown region {rid}")
        lut[rid] = s
    return AnomalyMap(lut[rm.labels])


def image_score(rs: RegionScores, reduce: str = "max", top_k: int = 3) -> float:
    """Image-level score: the maximum region score, or with ``reduce="topk"``
    the mean of the ``top_k`` highest. Empty scores give 0."""
    values: Iterable[float] = rs.entries.values()
    vals = sorted(values, reverse=True)
    if not vals:
        return 0.0
    if reduce == "max":
        return vals[0]
    if reduce == "topk":
        return float(np.mean(vals[:top_k]))
    raise InvalidInputError(f"unknown reduction {reduce!r}")
