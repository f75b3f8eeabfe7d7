"""End-to-end batch runs: divide, prompt, query, parse, paint, evaluate.

A run writes everything into one directory::

    run.json            config + sample list
    ledger.jsonl        one record per sample (digest, timing, status)
    cache.jsonl         recorded responses, replayable with the replay backend
    overlays/<cat>/     fused images sent to the backend
    regions/<cat>/      16-bit region-id maps
    responses/<cat>/    raw text (.txt) and parsed scores (.json)
    maps/<cat>/         16-bit anomaly maps (value = round(score * 65535))
    report.csv/.json    metrics, written by :func:`evaluate_run`
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .backend import (
    Backend,
    ConstantBackend,
    LiveBackend,
    OracleBackend,
    QueryRequest,
    RecordingBackend,
    ReplayBackend,
    ResponseCache,
)
from .core import (
    AnomalyMap,
    ImageBuffer,
    InvalidInputError,
    RegionMap,
    RegionScores,
    SampleRecord,
    WORKING_SIZE,
    read_mask,
    resize_mask_nearest,
    resize_to_working,
)
from .data import DatasetIntegrityError, DatasetSpec, load_dataset
from .metrics import EvalReport, aggregate, category_row
from .protocol import build_prompt, image_score, parse_region_scores, scores_to_anomaly_map
from .regionize import DivisionConfig, divide, grid_divide, render_overlay

logger = logging.getLogger(__name__)

BACKENDS = ("live", "replay", "oracle", "constant")
FAILURE_LIMIT = 0.10


class RunAborted(RuntimeError):
    pass


@dataclass
class RunConfig:
    dataset: Path
    out: Path
    kind: str = "mvtec"
    categories: tuple[str, ...] | None = None
    division: DivisionConfig = field(default_factory=DivisionConfig)
    masks: str | None = None  # directory of region masks, or "gt" for ideal regions
    backend: str = "oracle"
    model_id: str | None = None
    cache: Path | None = None
    constant_score: float = 0.5
    base_url: str = "https://api.openai.com"
    api_path: str = "/v1/chat/completions"
    requests_per_minute: float | None = 10.0
    workers: int = 1
    trials: int = 2
    working_size: int = WORKING_SIZE
    image_reduce: str = "max"

    def __post_init__(self) -> None:
        self.dataset = Path(self.dataset)
        self.out = Path(self.out)
        if self.cache is not None:
            self.cache = Path(self.cache)
        if self.categories is not None:
            self.categories = tuple(self.categories)
        if self.backend not in BACKENDS:
            raise InvalidInputError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "replay" and (self.cache is None or not self.cache.is_file()):
            raise InvalidInputError("the replay backend needs an existing --cache file")
        if self.backend == "replay" and not self.model_id:
            raise InvalidInputError("the replay backend needs the --model the responses were recorded with")
        if self.masks is not None and self.division.method != "imported":
            raise InvalidInputError("--masks only applies to the imported division method")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")

    @property
    def resolved_model(self) -> str:
        if self.model_id:
            return self.model_id
        return "gpt-4-vision-preview" if self.backend == "live" else self.backend

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("dataset", "out", "cache"):
            d[k] = None if d[k] is None else str(d[k])
        return d


def make_backend(cfg: RunConfig) -> Backend:
    model = cfg.resolved_model
    if cfg.backend == "replay":
        return ReplayBackend(cfg.cache, model)
    if cfg.backend == "oracle":
        return OracleBackend(model)
    if cfg.backend == "constant":
        return ConstantBackend(cfg.constant_score, model)
    return LiveBackend(model, cfg.base_url, cfg.api_path, requests_per_minute=cfg.requests_per_minute)


def sample_ids(samples: list[SampleRecord]) -> list[str]:
    ids, seen = [], set()
    for s in samples:
        base = f"{s.image_path.parent.name}_{s.image_path.stem}"
        sid, n = base, 1
        while sid in seen:
            n += 1
            sid = f"{base}-{n}"
        seen.add(sid)
        ids.append(sid)
    return ids


def prompt_category(category: str) -> str:
    return category.replace("_", " ")


def working_gt(sample: SampleRecord, size: int) -> np.ndarray:
    if sample.mask_path is None:
        return np.zeros((size, size), dtype=bool)
    return resize_mask_nearest(read_mask(sample.mask_path), size)


def ideal_region_masks(gt: np.ndarray, rows: int = 8, cols: int = 8) -> list[np.ndarray]:
    """Region masks that follow the GT exactly: grid tiles with the GT cut
    out, then the GT itself on top."""
    h, w = gt.shape
    tiles = grid_divide(w, h, rows, cols).labels
    masks = [(tiles == i) & ~gt for i in range(1, rows * cols + 1)]
    masks.append(gt.copy())
    return masks


def region_masks_for(sample: SampleRecord, sid: str, cfg: RunConfig, gt: np.ndarray) -> list[np.ndarray] | None:
    if cfg.division.method != "imported":
        return None
    if cfg.masks is None:
        raise InvalidInputError("imported division needs --masks DIR or --masks gt")
    if cfg.masks == "gt":
        return ideal_region_masks(gt, cfg.division.grid_rows, cfg.division.grid_cols)
    folder = Path(cfg.masks) / sample.category / sample.image_path.stem
    files = sorted(folder.glob("*.png"))
    return [resize_mask_nearest(read_mask(f), cfg.working_size) for f in files]


@dataclass
class Division:
    image: ImageBuffer
    region_map: RegionMap
    overlay: ImageBuffer
    gt: np.ndarray


def divide_sample(sample: SampleRecord, sid: str, cfg: RunConfig) -> Division:
    img = resize_to_working(ImageBuffer.open(sample.image_path), cfg.working_size)
    gt = working_gt(sample, cfg.working_size)
    rm = divide(img, cfg.division, region_masks_for(sample, sid, cfg, gt))
    return Division(img, rm, render_overlay(img, rm, cfg.division), gt)


def _dirs(out: Path, category: str) -> dict[str, Path]:
    d = {name: out / name / category for name in ("overlays", "regions", "responses", "maps")}
    for p in d.values():
        p.mkdir(parents=True, exist_ok=True)
    return d


def _samples(cfg: RunConfig) -> list[tuple[str, SampleRecord]]:
    grouped = load_dataset(DatasetSpec(cfg.dataset, cfg.kind, cfg.categories))
    out = []
    for cat, recs in grouped.items():
        out.extend(zip(sample_ids(recs), recs))
    return out


def _map_parallel(fn: Callable, items: list, workers: int) -> list:
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def cmd_divide(cfg: RunConfig) -> list[Path]:
    """Write the overlay and region map of every test image."""
    items = _samples(cfg)

    def work(item):
        sid, s = item
        d = divide_sample(s, sid, cfg)
        dirs = _dirs(cfg.out, s.category)
        d.overlay.save(dirs["overlays"] / f"{sid}.png")
        d.region_map.to_png(dirs["regions"] / f"{sid}.png")
        return dirs["overlays"] / f"{sid}.png"

    return _map_parallel(work, items, cfg.workers)


def process_sample(sample: SampleRecord, sid: str, cfg: RunConfig, backend: Backend) -> dict:
    start = time.perf_counter()
    d = divide_sample(sample, sid, cfg)
    prompt = build_prompt(prompt_category(sample.category))
    req = QueryRequest.build(d.overlay, prompt, cfg.resolved_model, region_map=d.region_map, gt_mask=d.gt)
    resp = backend.query(req)
    rs, warnings = parse_region_scores(resp.raw_text, d.region_map)
    amap = scores_to_anomaly_map(d.region_map, rs)

    dirs = _dirs(cfg.out, sample.category)
    (dirs["overlays"] / f"{sid}.png").write_bytes(req.image_png)
    d.region_map.to_png(dirs["regions"] / f"{sid}.png")
    (dirs["responses"] / f"{sid}.txt").write_bytes(resp.raw_text.encode("utf-8"))
    parsed = {
        "scores": rs.to_json_dict(),
        "image_score": image_score(rs, cfg.image_reduce),
        "warnings": warnings,
    }
    (dirs["responses"] / f"{sid}.json").write_text(json.dumps(parsed, indent=2) + "\n", encoding="utf-8")
    amap.to_png(dirs["maps"] / f"{sid}.png")
    return {
        "sample_id": sid,
        "category": sample.category,
        "status": "ok",
        "digest": req.digest,
        "prompt_sha": req.prompt_sha,
        "model_id": resp.model_id,
        "from_cache": resp.from_cache,
        "latency_ms": round(resp.latency_ms, 3),
        "elapsed_ms": round((time.perf_counter() - start) * 1000.0, 3),
        "n_regions": len(d.region_map),
        "scores": rs.to_json_dict(),
        "warnings": warnings,
    }


def cmd_run(cfg: RunConfig) -> list[dict]:
    """Process every test sample; returns the ledger records.

    Per-sample failures are logged and skipped; more than 10% failures
    raises :class:`RunAborted` after the ledger is written.
    """
    items = _samples(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    backend = make_backend(cfg)
    if cfg.backend != "replay":
        backend = RecordingBackend(backend, ResponseCache(cfg.out / "cache.jsonl"))

    run_info = {
        "config": cfg.to_json(),
        "samples": [
            {
                "sample_id": sid,
                "category": s.category,
                "image_path": str(s.image_path),
                "mask_path": None if s.mask_path is None else str(s.mask_path),
                "is_anomalous": s.is_anomalous,
            }
            for sid, s in items
        ],
    }
    (cfg.out / "run.json").write_text(json.dumps(run_info, indent=2) + "\n", encoding="utf-8")

    def work(item):
        sid, s = item
        try:
            return process_sample(s, sid, cfg, backend)
        except Exception as exc:  # noqa: BLE001 - failures are per sample
            logger.warning("sample %s/%s failed: %s", s.category, sid, exc)
            return {"sample_id": sid, "category": s.category, "status": "failed",
                    "error": f"{type(exc).__name__}: {exc}"}

    records = _map_parallel(work, items, cfg.workers)
    with open(cfg.out / "ledger.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    failed = [r for r in records if r["status"] != "ok"]
    if items and len(failed) > FAILURE_LIMIT * len(items):
        summary = "; ".join(f"{r['category']}/{r['sample_id']}: {r['error']}" for r in failed[:5])
        raise RunAborted(f"{len(failed)}/{len(items)} samples failed: {summary}")
    return records


def _load_run(run_dir: Path) -> tuple[dict, list[dict]]:
    info = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    failed = set()
    ledger = run_dir / "ledger.jsonl"
    if ledger.exists():
        for line in ledger.read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            if rec.get("status") != "ok":
                failed.add((rec["category"], rec["sample_id"]))
    samples = [s for s in info["samples"] if (s["category"], s["sample_id"]) not in failed]
    return info, samples


def evaluate_run(run_dir: str | Path, limit: float = 0.3) -> EvalReport:
    """Score a finished run and write ``report.csv`` / ``report.json``."""
    run_dir = Path(run_dir)
    info, samples = _load_run(run_dir)
    size = info["config"]["working_size"]
    missing = [
        f"{s['category']}/{s['sample_id']}"
        for s in samples
        if not (run_dir / "maps" / s["category"] / f"{s['sample_id']}.png").is_file()
        or not (run_dir / "responses" / s["category"] / f"{s['sample_id']}.json").is_file()
    ]
    if missing:
        raise DatasetIntegrityError(f"missing anomaly maps for: {', '.join(missing)}")

    by_cat: dict[str, list[dict]] = {}
    for s in samples:
        by_cat.setdefault(s["category"], []).append(s)
    rows = {}
    for cat in sorted(by_cat):
        img_scores, img_labels, maps, gts = [], [], [], []
        for s in by_cat[cat]:
            parsed = json.loads((run_dir / "responses" / cat / f"{s['sample_id']}.json").read_text(encoding="utf-8"))
            img_scores.append(parsed["image_score"])
            img_labels.append(s["is_anomalous"])
            maps.append(AnomalyMap.from_png(run_dir / "maps" / cat / f"{s['sample_id']}.png").scores)
            rec = SampleRecord(Path(s["image_path"]), cat, s["is_anomalous"],
                               None if s["mask_path"] is None else Path(s["mask_path"]))
            gts.append(working_gt(rec, size))
        rows[cat] = category_row(img_scores, img_labels, maps, gts, limit)
    report = aggregate(rows)
    report.write_csv(run_dir / "report.csv")
    report.write_json(run_dir / "report.json")
    return report


def red_shading(scores: np.ndarray) -> np.ndarray:
    """Red channel proportional to score, green and blue zero."""
    out = np.zeros(scores.shape + (3,), dtype=np.uint8)
    out[..., 0] = np.round(np.clip(scores, 0.0, 1.0) * 255.0).astype(np.uint8)
    return out


def cmd_visualize(run_dir: str | Path) -> list[Path]:
    """Per sample: input | overlay | red anomaly map | GT mask, side by side."""
    run_dir = Path(run_dir)
    info, samples = _load_run(run_dir)
    size = info["config"]["working_size"]
    written = []
    for s in samples:
        cat, sid = s["category"], s["sample_id"]
        img = resize_to_working(ImageBuffer.open(s["image_path"]), size).pixels
        overlay = ImageBuffer.open(run_dir / "overlays" / cat / f"{sid}.png").pixels
        amap = AnomalyMap.from_png(run_dir / "maps" / cat / f"{sid}.png").scores
        rec = SampleRecord(Path(s["image_path"]), cat, s["is_anomalous"],
                           None if s["mask_path"] is None else Path(s["mask_path"]))
        gt = np.repeat((working_gt(rec, size).astype(np.uint8) * 255)[..., None], 3, axis=2)
        panel = np.concatenate([img, overlay, red_shading(amap), gt], axis=1)
        dest = run_dir / "panels" / cat
        dest.mkdir(parents=True, exist_ok=True)
        Image.fromarray(panel, mode="RGB").save(dest / f"{sid}.png")
        written.append(dest / f"{sid}.png")
    return written


def _jaccard(a: set[int], b: set[int]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def cmd_trials(cfg: RunConfig, n: int | None = None) -> Path:
    """Repeat the run ``n`` times and write ``stability.csv``: the std of each
    image score and the mean pairwise Jaccard of the mentioned region ids."""
    n = cfg.trials if n is None else n
    if n < 2:
        raise InvalidInputError("trials need n >= 2")
    if cfg.backend not in ("live", "constant"):
        raise InvalidInputError(f"trials are only meaningful for live or constant backends, not {cfg.backend}")
    per_trial = []
    for t in range(n):
        recs = cmd_run(replace(cfg, out=cfg.out / f"trial_{t}"))
        per_trial.append({(r["category"], r["sample_id"]): r for r in recs})

    lines = ["category,sample_id," + ",".join(f"score_{t}" for t in range(n)) + ",score_std,mean_jaccard"]
    for key in per_trial[0]:
        recs = [tr.get(key) for tr in per_trial]
        if any(r is None or r["status"] != "ok" for r in recs):
            continue
        scores = [image_score(RegionScores.from_json_dict(r["scores"]), cfg.image_reduce) for r in recs]
        id_sets = [set(map(int, r["scores"])) for r in recs]
        jac = float(np.mean([_jaccard(a, b) for a, b in combinations(id_sets, 2)]))
        lines.append(",".join([key[0], key[1], *(f"{s:.6f}" for s in scores), f"{np.std(scores):.6f}", f"{jac:.6f}"]))
    path = cfg.out / "stability.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
