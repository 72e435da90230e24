"""Consensus ground truth from redundant crowdsourced box annotations.

Pipeline per image: drop images with too many NO_LOGO votes, cluster the
remaining annotation boxes with DBSCAN over the IoU-complement distance,
merge each cluster into a coordinate-wise median box, and discard merged
boxes that nearly cover the whole image. A seeded brand-disjoint splitter
produces train/val/test partitions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from logokit.geometry import Box, iou, pairwise_distances

NOISE = -1


class LogoLabel(Enum):
    NO_LOGO = "NO_LOGO"
    ONE_LOGO = "ONE_LOGO"
    MULTIPLE_LOGO = "MULTIPLE_LOGO"


class MergeDegenerateError(ValueError):
    """Raised when a merged cluster box has non-positive area."""


@dataclass(frozen=True)
class WorkerAnnotation:
    """One worker's verdict on one image: a vote plus an optional box."""

    worker_id: str
    logo_label: LogoLabel
    box: Box | None = None

    def __post_init__(self) -> None:
        if self.logo_label is LogoLabel.NO_LOGO and self.box is not None:
            raise ValueError("NO_LOGO annotation must not carry a box")
        if self.logo_label is not LogoLabel.NO_LOGO and self.box is None:
            raise ValueError(f"{self.logo_label.value} annotation requires a box")


@dataclass
class ImageRecord:
    image_id: str
    brand: str
    width: float
    height: float
    annotations: list[WorkerAnnotation] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")

    def no_logo_votes(self) -> int:
        return sum(1 for a in self.annotations if a.logo_label is LogoLabel.NO_LOGO)

    def logo_boxes(self) -> list[Box]:
        return [a.box for a in self.annotations if a.box is not None]


@dataclass(frozen=True)
class ConsensusBox:
    """Merged box agreed on by `support` annotations of one image."""

    image_id: str
    box: Box
    support: int
    cluster_id: int


@dataclass(frozen=True)
class ConsolidationConfig:
    eps: float = 0.6
    min_samples: int = 1
    whole_image_iou: float = 0.65
    no_logo_vote_threshold: int = 3
    min_cluster_support: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must be in (0, 1), got {self.eps}")
        if self.min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")
        if not 0.0 < self.whole_image_iou <= 1.0:
            raise ValueError(f"whole_image_iou must be in (0, 1], got {self.whole_image_iou}")
        if self.min_cluster_support < 1:
            raise ValueError("min_cluster_support must be >= 1")


def filter_no_logo(
    images: list[ImageRecord], threshold: int
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Partition images into (kept, dropped) by NO_LOGO vote count.

    An image is dropped when strictly more than `threshold` of its
    annotations voted NO_LOGO. Input order is preserved in both lists.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    kept, dropped = [], []
    for rec in images:
        (dropped if rec.no_logo_votes() > threshold else kept).append(rec)
    return kept, dropped


def dbscan(dist: np.ndarray, eps: float, min_samples: int) -> list[int]:
    """DBSCAN over a precomputed symmetric distance matrix.

    A point is core when its eps-neighborhood (self included) holds at
    least `min_samples` points; clusters are maximal density-connected
    sets and non-core points out of reach of any cluster get NOISE (-1).
    With min_samples == 1 every point is core and the result equals the
    connected components of the graph {(i, j): dist[i][j] <= eps}.
    Cluster ids are 0..k-1 ordered by each cluster's first member index.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {dist.shape}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")

    n = dist.shape[0]
    neighbors = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_samples for nb in neighbors]

    labels = [NOISE] * n
    next_id = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = next_id
        frontier = deque([seed])
        while frontier:
            p = frontier.popleft()
            if not core[p]:
                continue  # border points join but never expand
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = next_id
                    frontier.append(q)
        next_id += 1

    # Renumber so ids follow the first-encountered member of each cluster
    # (a border point can precede its cluster's seed in index order).
    first_seen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab != NOISE and lab not in first_seen:
            first_seen[lab] = i
    order = sorted(first_seen, key=first_seen.get)
    remap = {old: new for new, old in enumerate(order)}
    return [remap[lab] if lab != NOISE else NOISE for lab in labels]


def _lower_median(values: list[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def merge_cluster(members: list[Box]) -> Box:
    """Coordinate-wise lower-median box of a cluster's members."""
    if not members:
        raise ValueError("cannot merge an empty cluster")
    x_min = _lower_median([b.x_min for b in members])
    y_min = _lower_median([b.y_min for b in members])
    x_max = _lower_median([b.x_max for b in members])
    y_max = _lower_median([b.y_max for b in members])
    if x_max <= x_min or y_max <= y_min:
        raise MergeDegenerateError(
            f"median box degenerate: ({x_min}, {y_min}, {x_max}, {y_max})"
        )
    return Box(x_min, y_min, x_max, y_max)


def consolidate_image(rec: ImageRecord, cfg: ConsolidationConfig) -> list[ConsensusBox]:
    """Cluster one image's annotation boxes and merge them into consensus boxes.

    Clusters below `min_cluster_support`, clusters whose median box
    degenerates, and merged boxes covering nearly the whole image
    (IoU with the image rectangle above `whole_image_iou`) are dropped.
    Results are sorted by support, descending.
    """
    boxes = rec.logo_boxes()
    if not boxes:
        return []
    labels = dbscan(pairwise_distances(boxes), cfg.eps, cfg.min_samples)
    image_rect = Box(0.0, 0.0, rec.width, rec.height)

    out: list[ConsensusBox] = []
    for cid in range(max(labels) + 1):
        members = [boxes[i] for i, lab in enumerate(labels) if lab == cid]
        if len(members) < cfg.min_cluster_support:
            continue
        try:
            merged = merge_cluster(members)
        except MergeDegenerateError:
            continue
        if iou(merged, image_rect) > cfg.whole_image_iou:
            continue
        out.append(ConsensusBox(rec.image_id, merged, len(members), cid))
    out.sort(key=lambda c: -c.support)
    return out


def split_dataset(
    images: list[ImageRecord],
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[list[ImageRecord], list[ImageRecord], list[ImageRecord]]:
    """Brand-disjoint train/val/test split targeting image-count fractions.

    Brands are shuffled with the seed, then each brand is assigned whole
    to the nonempty split with the largest remaining image-count deficit
    (ties go to the lower split index). No brand ever appears in two
    splits; the per-split image order follows the input order.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must have exactly three entries")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")

    brand_counts: dict[str, int] = {}
    for rec in images:
        brand_counts[rec.brand] = brand_counts.get(rec.brand, 0) + 1
    brands = list(brand_counts)

    nonempty = [i for i, f in enumerate(fractions) if f > 0]
    if len(brands) < len(nonempty):
        raise ValueError(
            f"insufficient brands: {len(brands)} distinct brands for "
            f"{len(nonempty)} nonempty splits"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(brands))

    total = len(images)
    targets = [f * total for f in fractions]
    assigned = [0.0, 0.0, 0.0]
    brand_split: dict[str, int] = {}
    for bi in order:
        brand = brands[bi]
        dest = max(nonempty, key=lambda s: (targets[s] - assigned[s], -s))
        brand_split[brand] = dest
        assigned[dest] += brand_counts[brand]

    splits: tuple[list[ImageRecord], ...] = ([], [], [])
    for rec in images:
        splits[brand_split[rec.brand]].append(rec)
    return splits
