"""Few-shot logo recognition toolkit.

Building blocks for training compact embedding models with proxy-based
losses, identifying classes by nearest-neighbor search over a handful of
anchors, consolidating crowdsourced bounding-box annotations into consensus
ground truth, and scoring detectors with recall/AP/FROC/mAP metrics.
"""

__version__ = "0.1.0"

from logokit.geometry import Box, iou, iou_distance, pairwise_distances

__all__ = [
    "Box",
    "iou",
    "iou_distance",
    "pairwise_distances",
    "__version__",
]
