import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from gpt4vad.core import AnomalyMap, InvalidInputError, RegionMap
from gpt4vad.data import DatasetIntegrityError, SynthConfig, generate_synthetic
from gpt4vad.metrics import METRIC_COLUMNS
from gpt4vad.pipeline import (
    RunAborted,
    RunConfig,
    cmd_divide,
    cmd_run,
    cmd_trials,
    cmd_visualize,
    evaluate_run,
    ideal_region_masks,
    prompt_category,
    red_shading,
)
from gpt4vad.regionize import DivisionConfig

SIZE = 128
GRID = DivisionConfig(method="grid", grid_rows=4, grid_cols=4, min_area=1, max_area=10**6)
IDEAL = replace(GRID, method="imported")


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(SynthConfig(seed=7, image_count=8, image_size=96, defect_radius_range=(6, 12)), root)
    return root


def _cfg(synth, out, **kw):
    base = dict(kind="synthetic", division=GRID, working_size=SIZE, backend="oracle")
    base.update(kw)
    return RunConfig(synth, out, **base)


def test_divide_writes_overlays_and_regions(synth, tmp_path):
    paths = cmd_divide(_cfg(synth, tmp_path))
    assert len(paths) == 8
    rm = RegionMap.from_png(tmp_path / "regions" / "synthetic" / paths[0].name)
    assert len(rm) == 16 and rm.shape == (SIZE, SIZE)


def test_oracle_run_with_ideal_regions_is_perfect(synth, tmp_path):
    cfg = _cfg(synth, tmp_path, masks="gt", division=IDEAL)
    records = cmd_run(cfg)
    assert all(r["status"] == "ok" for r in records)
    report = evaluate_run(tmp_path)
    for col in METRIC_COLUMNS:
        assert report.average[col] == pytest.approx(1.0)


def test_constant_run_is_chance(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path, backend="constant", constant_score=0.5))
    report = evaluate_run(tmp_path)
    assert report.average["image_auroc"] == 0.5
    assert report.average["pixel_auroc"] == 0.5
    assert report.average["pixel_aupro"] == 0.0


def test_run_layout_and_ledger(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path))
    for sub in ("overlays", "regions", "responses", "maps"):
        assert len(list((tmp_path / sub / "synthetic").glob("*.png" if sub != "responses" else "*.txt"))) == 8
    ledger = [json.loads(x) for x in (tmp_path / "ledger.jsonl").read_text().splitlines()]
    assert len(ledger) == 8 and {r["status"] for r in ledger} == {"ok"}
    assert len((tmp_path / "cache.jsonl").read_text().splitlines()) == 8
    parsed = json.loads(next((tmp_path / "responses" / "synthetic").glob("*.json")).read_text())
    assert set(parsed) == {"scores", "image_score", "warnings"}


def test_replay_reproduces_maps_and_report(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path / "live"))
    evaluate_run(tmp_path / "live")
    cache = tmp_path / "live" / "cache.jsonl"
    for name in ("r1", "r2"):
        cmd_run(_cfg(synth, tmp_path / name, backend="replay", cache=cache, model_id="oracle"))
        evaluate_run(tmp_path / name)
    for name in ("r1", "r2"):
        for sub in ("maps", "overlays", "regions"):
            for p in sorted((tmp_path / "live" / sub / "synthetic").glob("*.png")):
                assert (tmp_path / name / sub / "synthetic" / p.name).read_bytes() == p.read_bytes()
        assert (tmp_path / name / "report.csv").read_bytes() == (tmp_path / "live" / "report.csv").read_bytes()


def test_replay_miss_fails_the_run(synth, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(RunAborted, match="CacheMiss"):
        cmd_run(_cfg(synth, tmp_path / "out", backend="replay", cache=empty, model_id="oracle"))
    ledger = (tmp_path / "out" / "ledger.jsonl").read_text().splitlines()
    assert all(json.loads(x)["status"] == "failed" for x in ledger)


def test_replay_requires_model_and_cache(synth, tmp_path):
    with pytest.raises(InvalidInputError):
        _cfg(synth, tmp_path, backend="replay")
    (tmp_path / "c.jsonl").write_text("")
    with pytest.raises(InvalidInputError):
        _cfg(synth, tmp_path, backend="replay", cache=tmp_path / "c.jsonl")


def test_eval_report_format(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path))
    evaluate_run(tmp_path)
    with open(tmp_path / "report.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["category", *METRIC_COLUMNS]
    assert [r[0] for r in rows[1:]] == ["synthetic", "Average"]
    for cell in rows[1][1:]:
        assert cell.count(".") == 1 and len(cell.split(".")[1]) == 1


def test_eval_missing_map_names_sample(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path))
    victim = sorted((tmp_path / "maps" / "synthetic").glob("*.png"))[2]
    victim.unlink()
    with pytest.raises(DatasetIntegrityError, match=victim.stem):
        evaluate_run(tmp_path)


def test_visualize_panels(synth, tmp_path):
    cmd_run(_cfg(synth, tmp_path, masks="gt", division=IDEAL))
    panels = cmd_visualize(tmp_path)
    assert len(panels) == 8
    px = np.asarray(Image.open(panels[0]))
    assert px.shape == (SIZE, 4 * SIZE, 3)
    amap = AnomalyMap.from_png(tmp_path / "maps" / "synthetic" / panels[0].name).scores
    assert np.array_equal(px[:, 2 * SIZE : 3 * SIZE], red_shading(amap))


def test_trials_constant_is_stable(synth, tmp_path):
    path = cmd_trials(_cfg(synth, tmp_path, backend="constant", constant_score=0.3), 2)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8
    assert all(float(r["score_std"]) == 0.0 and float(r["mean_jaccard"]) == 1.0 for r in rows)


def test_trials_reject_replay_and_single_trial(synth, tmp_path):
    (tmp_path / "c.jsonl").write_text("")
    with pytest.raises(InvalidInputError):
        cmd_trials(_cfg(synth, tmp_path, backend="replay", cache=tmp_path / "c.jsonl", model_id="m"), 2)
    with pytest.raises(InvalidInputError):
        cmd_trials(_cfg(synth, tmp_path, backend="constant"), 1)


def test_masks_need_imported_method(synth, tmp_path):
    with pytest.raises(InvalidInputError):
        _cfg(synth, tmp_path, masks="gt")


def test_ideal_masks_partition_frame():
    gt = np.zeros((32, 32), bool)
    gt[5:12, 20:30] = True
    masks = ideal_region_masks(gt, 2, 2)
    assert np.array_equal(masks[-1], gt)
    cover = np.sum(masks, axis=0)
    assert (cover == 1).all()


def test_prompt_category_spaces():
    assert prompt_category("metal_nut") == "metal nut"
    assert prompt_category("pipe_fryum") == "pipe fryum"
