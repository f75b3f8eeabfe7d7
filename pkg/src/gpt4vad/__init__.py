"""Zero-shot anomaly detection by prompting a vision-language model with
numbered image regions and parsing its per-region scores back into maps."""

from .core import (
    AnomalyMap,
    ImageBuffer,
    InvalidInputError,
    RegionMap,
    RegionRecord,
    RegionScores,
    SampleRecord,
    resize_mask_nearest,
    resize_to_working,
)
from .protocol import build_prompt, image_score, parse_region_scores, scores_to_anomaly_map
from .regionize import (
    DivisionConfig,
    divide,
    filter_regions,
    grid_divide,
    import_regions,
    label_anchor,
    render_overlay,
    slic_divide,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap", "ImageBuffer", "InvalidInputError", "RegionMap", "RegionRecord", "RegionScores",
    "SampleRecord", "resize_mask_nearest", "resize_to_working", "build_prompt", "image_score",
    "parse_region_scores", "scores_to_anomaly_map", "DivisionConfig", "divide", "filter_regions",
    "grid_divide", "import_regions", "label_anchor", "render_overlay", "slic_divide",
]
