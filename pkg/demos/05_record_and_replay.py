"""Recording model answers and replaying them later.

Every query is keyed by a hash of model id, prompt and the exact PNG bytes
sent. A recorded cache lets the whole run be reproduced offline, byte for
byte. The same cache holds live GPT-4V answers, which is how a paid run can
be re-scored without paying twice.
"""
# %%
import hashlib
import tempfile
from pathlib import Path

from gpt4vad.data import SynthConfig, generate_synthetic
from gpt4vad.pipeline import RunConfig, cmd_run, evaluate_run
from gpt4vad.regionize import DivisionConfig

work = Path(tempfile.mkdtemp(prefix="gpt4vad_replay_"))
generate_synthetic(SynthConfig(seed=3, image_count=8), work / "data")
grid = DivisionConfig(method="grid")

# any non-replay run records into <out>/cache.jsonl
cmd_run(RunConfig(work / "data", work / "recorded", kind="synthetic", division=grid, backend="oracle"))
evaluate_run(work / "recorded")
print((work / "recorded" / "cache.jsonl").read_text().splitlines()[0][:160], "...")

# %% replay: the model id must match the one used when recording
cmd_run(RunConfig(work / "data", work / "replayed", kind="synthetic", division=grid, backend="replay",
                  cache=work / "recorded" / "cache.jsonl", model_id="oracle"))
evaluate_run(work / "replayed")


def digest(run, name):
    return hashlib.sha256((work / run / name).read_bytes()).hexdigest()[:16]


print("report.csv", digest("recorded", "report.csv"), digest("replayed", "report.csv"))

# %% a live run looks like this (needs GPT4VAD_API_KEY):
#   gpt4vad run --dataset mvtec_ad --out runs/live --backend live --model gpt-4-vision-preview
# and later, offline:
#   gpt4vad run --dataset mvtec_ad --out runs/again --backend replay \
#       --cache runs/live/cache.jsonl --model gpt-4-vision-preview
