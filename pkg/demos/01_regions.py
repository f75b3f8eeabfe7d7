"""Cutting an image into numbered regions.

Three ways to get a region map: a fixed grid, SLIC superpixels, or masks
supplied from elsewhere. Each map is drawn onto the image with white edges
and a number per region, which is what the vision model gets to look at.
"""
# %%
import tempfile
from pathlib import Path

import numpy as np

from gpt4vad import ImageBuffer
from gpt4vad.core import resize_to_working
from gpt4vad.data import SynthConfig, generate_synthetic, load_manifest
from gpt4vad.regionize import DivisionConfig, divide, import_regions, render_overlay

out = Path(tempfile.mkdtemp(prefix="gpt4vad_regions_"))
generate_synthetic(SynthConfig(seed=7, image_count=4), out / "data")
sample = next(r for r in load_manifest(out / "data" / "manifest.csv")["synthetic"] if r.is_anomalous)
img = resize_to_working(ImageBuffer.open(sample.image_path))
print("working image:", img.width, "x", img.height)

# %% a plain 8x8 grid: 64 cells of 96x96 pixels
grid = divide(img, DivisionConfig(method="grid"))
print("grid regions:", len(grid), "areas:", {r.area for r in grid.regions})

# %% SLIC superpixels follow colour edges; orphans are merged so each region is one piece
slic = divide(img, DivisionConfig(method="superpixel", slic_segments=60))
areas = np.array([r.area for r in slic.regions])
print(f"superpixel regions: {len(slic)}, area min/median/max = {areas.min()}/{int(np.median(areas))}/{areas.max()}")

# %% imported masks: later masks win where they overlap
a = np.zeros((768, 768), bool)
a[100:400, 100:400] = True
b = np.zeros((768, 768), bool)
b[300:600, 300:600] = True
imported = import_regions([a, b])
print("imported regions:", [(r.id, r.area) for r in imported.regions])

# %% the overlays
for name, rm in (("grid", grid), ("slic", slic), ("imported", imported)):
    render_overlay(img, rm).save(out / f"overlay_{name}.png")
print("overlays written to", out)
