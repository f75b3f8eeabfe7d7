"""A whole run on synthetic defects, without any API access.

The oracle backend answers with the true defect fraction of each region, so
its scores show how far a given region division can take the method. With
regions cut along the ground truth the result is perfect. SLIC superpixels
come close, and a constant answer gives chance level.
"""
# %%
import tempfile
from pathlib import Path

from gpt4vad.data import SynthConfig, generate_synthetic
from gpt4vad.pipeline import RunConfig, cmd_run, cmd_visualize, evaluate_run
from gpt4vad.regionize import DivisionConfig

work = Path(tempfile.mkdtemp(prefix="gpt4vad_e2e_"))
generate_synthetic(SynthConfig(seed=7, image_count=20), work / "data")

runs = {
    "ideal regions + oracle": dict(division=DivisionConfig(method="imported"), masks="gt", backend="oracle"),
    "superpixels + oracle": dict(backend="oracle", workers=4),
    "grid + constant 0.5": dict(division=DivisionConfig(method="grid"), backend="constant"),
}
for name, opts in runs.items():
    out = work / name.split()[0]
    cmd_run(RunConfig(work / "data", out, kind="synthetic", **opts))
    print(f"\n== {name}")
    print(evaluate_run(out).to_text())

# %% input | overlay | anomaly map | ground truth
panels = cmd_visualize(work / "superpixels")
print("\npanels:", panels[0].parent)
