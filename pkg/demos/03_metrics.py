"""The seven report columns on toy data.

Image-level AU-ROC, AP and F1-max, the same three per pixel, and AU-PRO up
to a 30% false positive rate.
"""
# %%
import numpy as np

from gpt4vad.metrics import aggregate, aupro, auroc, average_precision, f1_max, pixel_metrics, pro_curve

scores = [0.1, 0.4, 0.35, 0.8]
labels = [0, 0, 1, 1]
print("AU-ROC", auroc(scores, labels))  # 3 of 4 pos/neg pairs ordered correctly
print("AP    ", average_precision([0.9, 0.8, 0.7], [1, 0, 1]))  # (1 + 2/3) / 2
print("F1-max", f1_max([0.9, 0.8, 0.1], [1, 0, 1]))

# %% ties count half, so a constant predictor sits at exactly 0.5
print("constant AU-ROC", auroc(np.full(10, 0.3), np.arange(10) % 2))

# %% pixel level: a blurry blob around the true defect
rng = np.random.default_rng(0)
gt = np.zeros((64, 64), bool)
gt[20:30, 25:40] = True
yy, xx = np.mgrid[:64, :64]
pred = np.exp(-((yy - 25) ** 2 + (xx - 32) ** 2) / 120.0) + 0.05 * rng.random((64, 64))
print(pixel_metrics([pred], [gt]))

# %% AU-PRO weighs every defect component equally, regardless of size
curve = pro_curve([pred], [gt])
print(f"AU-PRO {aupro([pred], [gt]):.3f} over {len(curve.fpr)} curve points")

# %% a report with an Average row
report = aggregate({
    "bottle": {**dict.fromkeys(["image_auroc", "image_ap", "image_f1_max"], 0.9),
               **dict.fromkeys(["pixel_auroc", "pixel_ap", "pixel_f1_max", "pixel_aupro"], 0.7)},
    "cable": {**dict.fromkeys(["image_auroc", "image_ap", "image_f1_max"], 0.6),
              **dict.fromkeys(["pixel_auroc", "pixel_ap", "pixel_f1_max", "pixel_aupro"], 0.5)},
})
print(report.to_text())
