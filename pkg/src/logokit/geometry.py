"""Axis-aligned box arithmetic and the IoU-complement distance.

Boxes are stored in corner form (x_min, y_min, x_max, y_max) with
real-valued (sub-pixel) coordinates; area is continuous, not pixel
counted, so boxes that merely share an edge have IoU 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in image coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"box must have strictly positive area, got {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        """Convert a (x, y, width, height) rectangle to corner form."""
        return cls(x, y, x + w, y + h)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Returns 0 for disjoint or edge-touching boxes and exactly 1 for
    identical boxes.
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def iou_distance(a: Box, b: Box) -> float:
    """Complement of IoU: 0 for identical boxes, 1 for disjoint ones."""
    return 1.0 - iou(a, b)


def pairwise_distances(boxes: list[Box]) -> np.ndarray:
    """Symmetric n x n matrix of iou_distance over every box pair.

    The diagonal is exactly zero and entries land in [0, 1].
    """
    if len(boxes) == 0:
        raise ValueError("pairwise_distances requires at least one box")
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    x1, y1, x2, y2 = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    iw = np.minimum(x2[:, None], x2[None, :]) - np.maximum(x1[:, None], x1[None, :])
    ih = np.minimum(y2[:, None], y2[None, :]) - np.maximum(y1[:, None], y1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area = (x2 - x1) * (y2 - y1)
    union = area[:, None] + area[None, :] - inter
    return 1.0 - inter / union
