"""Dataset loaders (MVTec layout, CSV manifest) and a seeded synthetic set."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import SampleRecord, write_mask

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".JPG", ".PNG")
MANIFEST_COLUMNS = ("category", "image_path", "label", "mask_path")


class DatasetIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    kind: str = "mvtec"  # mvtec | manifest | synthetic
    categories: tuple[str, ...] | None = None


def _filter(grouped: dict[str, list[SampleRecord]], categories: Sequence[str] | None) -> dict[str, list[SampleRecord]]:
    if categories is None:
        return dict(sorted(grouped.items()))
    missing = [c for c in categories if c not in grouped]
    if missing:
        raise DatasetIntegrityError(f"categories not found: {', '.join(missing)}")
    return {c: grouped[c] for c in sorted(categories)}


def load_mvtec(root: str | Path, categories: Sequence[str] | None = None) -> dict[str, list[SampleRecord]]:
    """Test split of an MVTec-style tree: ``{category}/test/{defect}/{nnn}.png``
    with masks at ``{category}/ground_truth/{defect}/{nnn}_mask.png``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetIntegrityError(f"dataset root {root} is not a directory")
    grouped: dict[str, list[SampleRecord]] = {}
    for cat_dir in sorted(p for p in root.iterdir() if (p / "test").is_dir()):
        if categories is not None and cat_dir.name not in categories:
            continue
        records = []
        for defect_dir in sorted(p for p in (cat_dir / "test").iterdir() if p.is_dir()):
            for img in sorted(p for p in defect_dir.iterdir() if p.suffix in IMAGE_SUFFIXES):
                if defect_dir.name == "good":
                    records.append(SampleRecord(img, cat_dir.name, False, None))
                    continue
                mask = cat_dir / "ground_truth" / defect_dir.name / f"{img.stem}_mask.png"
                if not mask.is_file():
                    raise DatasetIntegrityError(f"anomalous image {img} has no mask at {mask}")
                records.append(SampleRecord(img, cat_dir.name, True, mask))
        grouped[cat_dir.name] = records
    return _filter(grouped, categories)


def load_manifest(path: str | Path, categories: Sequence[str] | None = None) -> dict[str, list[SampleRecord]]:
    """Rows of ``category,image_path,label,mask_path``; relative paths are
    resolved against the manifest's directory."""
    path = Path(path)
    base = path.parent
    grouped: dict[str, list[SampleRecord]] = defaultdict(list)
    seen: dict[Path, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(MANIFEST_COLUMNS) - set(reader.fieldnames):
            raise DatasetIntegrityError(f"{path}: header must contain {', '.join(MANIFEST_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            where = f"{path}:{line}"
            label = (row["label"] or "").strip().lower()
            if label not in ("normal", "anomaly"):
                raise DatasetIntegrityError(f"{where}: unknown label {row['label']!r}")
            category = (row["category"] or "").strip()
            if not category:
                raise DatasetIntegrityError(f"{where}: empty category")
            image = base / row["image_path"].strip()
            if not image.is_file():
                raise DatasetIntegrityError(f"{where}: image {image} not found")
            if image in seen:
                raise DatasetIntegrityError(f"{where}: image {image} already listed on line {seen[image]}")
            seen[image] = line
            mask_field = (row["mask_path"] or "").strip()
            mask = base / mask_field if mask_field else None
            if label == "anomaly" and mask is None:
                raise DatasetIntegrityError(f"{where}: anomaly row without mask_path")
            if mask is not None and not mask.is_file():
                raise DatasetIntegrityError(f"{where}: mask {mask} not found")
            grouped[category].append(SampleRecord(image, category, label == "anomaly", mask))
    return _filter(dict(grouped), categories)


def load_dataset(spec: DatasetSpec) -> dict[str, list[SampleRecord]]:
    if spec.kind == "mvtec":
        return load_mvtec(spec.root, spec.categories)
    if spec.kind in ("manifest", "synthetic"):
        root = Path(spec.root)
        return load_manifest(root / "manifest.csv" if root.is_dir() else root, spec.categories)
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    image_count: int = 20
    image_size: int = 256
    defect_count_range: tuple[int, int] = (1, 3)
    defect_radius_range: tuple[float, float] = (8.0, 18.0)
    background: str = "noise"  # flat | noise
    anomaly_ratio: float = 0.5
    categories: tuple[str, ...] = ("synthetic",)

    def __post_init__(self) -> None:
        lo, hi = self.defect_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad defect_count_range {self.defect_count_range}")
        rlo, rhi = self.defect_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ValueError(f"bad defect_radius_range {self.defect_radius_range}")
        if self.background not in ("flat", "noise"):
            raise ValueError(f"background must be flat or noise, got {self.background!r}")
        if self.image_count < 1 or self.image_size < 8:
            raise ValueError("need at least one image of at least 8x8 pixels")


def ellipse_mask(shape: tuple[int, int], cy: float, cx: float, ry: float, rx: float, angle: float = 0.0) -> np.ndarray:
    """Pixels whose centers satisfy the (rotated) ellipse inequality."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def synth_background(rng: np.random.Generator, size: int, kind: str) -> np.ndarray:
    # base colours stay in [70, 185] so a +-40 defect never clips back onto the background
    base = rng.integers(70, 186, size=3)
    img = np.broadcast_to(base, (size, size, 3)).astype(np.int16)
    if kind == "noise":
        img = img + rng.integers(-6, 7, size=(size, size, 3))
    return img


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write a seeded set of normal and defective images plus ``manifest.csv``.

    Defects are filled ellipses offset by +-40 grey levels; the GT mask is
    exactly the union of the defect ellipses. Identical configs produce
    bit-identical files.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    n_cat = len(cfg.categories)
    lo, hi = cfg.defect_count_range
    n_anomalous = int(round(cfg.anomaly_ratio * cfg.image_count)) if hi > 0 else 0
    defective = set(rng.permutation(cfg.image_count)[:n_anomalous].tolist())
    for i in range(cfg.image_count):
        cat = cfg.categories[i % n_cat]
        (out / cat / "images").mkdir(parents=True, exist_ok=True)
        (out / cat / "masks").mkdir(parents=True, exist_ok=True)
        clean = synth_background(rng, cfg.image_size, cfg.background)
        img = clean.copy()
        mask = np.zeros((cfg.image_size, cfg.image_size), dtype=bool)
        if i in defective:
            for _ in range(int(rng.integers(max(lo, 1), hi + 1))):
                ry, rx = rng.uniform(*cfg.defect_radius_range, size=2)
                margin = max(ry, rx) + 2
                cy, cx = rng.uniform(margin, cfg.image_size - margin, size=2)
                sign = 1 if rng.random() < 0.5 else -1
                e = ellipse_mask(mask.shape, cy, cx, ry, rx, rng.uniform(0, np.pi))
                img[e] = clean[e] + sign * 40
                mask |= e
        stem = f"{i:04d}"
        Image.fromarray(np.clip(img, 0, 255).astype(np.uint8), mode="RGB").save(out / cat / "images" / f"{stem}.png")
        mask_rel = ""
        if mask.any():
            write_mask(mask, out / cat / "masks" / f"{stem}_mask.png")
            mask_rel = f"{cat}/masks/{stem}_mask.png"
        rows.append((cat, f"{cat}/images/{stem}.png", "anomaly" if mask.any() else "normal", mask_rel))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    return manifest
