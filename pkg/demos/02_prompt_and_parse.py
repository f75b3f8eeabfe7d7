"""The text side of the protocol: the prompt and reading the answer back.

The reply is free text. The parser pulls ``region N: score`` pairs out of it
and is forgiving about markdown and separators. It never raises on garbage;
anything odd becomes a warning.
"""
# %%
from gpt4vad.protocol import build_prompt, format_region_scores, image_score, parse_region_scores, scores_to_anomaly_map
from gpt4vad.regionize import grid_divide

print(build_prompt("metal nut"))

# %% a well-behaved answer
regions = grid_divide(768, 768, 8, 8)
scores, warnings = parse_region_scores("region 1: 0.9; region 3: 0.7.", regions)
print(scores.entries, warnings)

# %% a messier one: markdown, a duplicate, an out-of-range score and an unknown id
reply = """**Region 12:** 0.8
- region 12: 0.95
- Region 40 = 1.3
- region 99: 0.5"""
scores, warnings = parse_region_scores(reply, regions)
print(scores.entries)
for w in warnings:
    print("  warning:", w)

# %% the canonical form round-trips
print(format_region_scores(scores))

# %% per-pixel map and a single image-level score
amap = scores_to_anomaly_map(regions, scores)
print("pixels scored above zero:", int((amap.scores > 0).sum()))
print("image score (max):", image_score(scores), " top-3 mean:", round(image_score(scores, "topk", 3), 4))
