"""Detector evaluation: greedy IoU matching, recall, AP, FROC, and mAP.

Matching is score-greedy per image against the strictly-above-threshold
IoU criterion; AP accumulates raw precision times recall increments at
every true positive (no interpolation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

from logokit.geometry import Box, iou


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box
    score: float
    class_label: Hashable | None = None

    def __post_init__(self) -> None:
        # a NaN score would silently scramble every descending-score sort
        if not math.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    box: Box
    class_label: Hashable | None = None


@dataclass
class MatchResult:
    """Per-detection TP/FP verdicts and per-ground-truth match flags.

    tp and matched_gt align with the input detection order; matched_gt
    holds indices into the ground-truth list. gt_matched aligns with the
    ground-truth order. Each ground truth is matched at most once.
    """

    tp: list[bool]
    matched_gt: list[int | None]
    gt_matched: list[bool]

    @property
    def num_tp(self) -> int:
        return sum(self.tp)

    @property
    def num_fp(self) -> int:
        return len(self.tp) - self.num_tp


@dataclass(frozen=True)
class FrocPoint:
    avg_false_positives_per_image: float
    recall: float


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedily match detections to ground truth, per image, score first.

    Within each image, detections are visited by descending score (input
    order on ties) and claim the unmatched ground truth of highest IoU,
    provided that IoU strictly exceeds the threshold; everything else is
    a false positive.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")

    gt_by_image: dict[str, list[int]] = {}
    for gi, gt in enumerate(gts):
        gt_by_image.setdefault(gt.image_id, []).append(gi)
    det_by_image: dict[str, list[int]] = {}
    for di, det in enumerate(dets):
        det_by_image.setdefault(det.image_id, []).append(di)

    tp = [False] * len(dets)
    matched_gt: list[int | None] = [None] * len(dets)
    gt_matched = [False] * len(gts)

    for image_id, det_indices in det_by_image.items():
        candidates = gt_by_image.get(image_id, [])
        ranked = sorted(det_indices, key=lambda di: -dets[di].score)
        for di in ranked:
            best_gi, best_iou = None, 0.0
            for gi in candidates:
                if gt_matched[gi]:
                    continue
                overlap = iou(dets[di].box, gts[gi].box)
                if overlap > iou_threshold and overlap > best_iou:
                    best_gi, best_iou = gi, overlap
            if best_gi is not None:
                tp[di] = True
                matched_gt[di] = best_gi
                gt_matched[best_gi] = True
    return MatchResult(tp=tp, matched_gt=matched_gt, gt_matched=gt_matched)


def recall(match: MatchResult) -> float:
    """Matched ground-truth fraction."""
    if not match.gt_matched:
        raise ValueError("recall is undefined with zero ground truths")
    return sum(match.gt_matched) / len(match.gt_matched)


def average_precision(
    flagged: Sequence[tuple[float, bool]], total_gt: int
) -> float:
    """Area under the raw precision-recall staircase.

    `flagged` pairs each detection score with its TP flag; the sweep
    sorts by descending score (stable) and adds precision / total_gt at
    every true positive.
    """
    if total_gt < 1:
        raise ValueError("total_gt must be >= 1")
    ranked = sorted(flagged, key=lambda p: -p[0])
    ap = 0.0
    tp = fp = 0
    for _, is_tp in ranked:
        if is_tp:
            tp += 1
            ap += (tp / (tp + fp)) / total_gt
        else:
            fp += 1
    return ap


def froc_curve(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    thresholds: Sequence[float],
    iou_threshold: float = 0.5,
    num_images: int | None = None,
) -> list[FrocPoint]:
    """Recall vs average false positives per image over a score sweep.

    Each threshold keeps detections scoring at or above it and rematches
    from scratch. num_images defaults to the number of distinct image
    ids across ground truths and detections.
    """
    if len(thresholds) == 0:
        raise ValueError("thresholds must be nonempty")
    if not gts:
        raise ValueError("froc_curve needs at least one ground truth")
    if num_images is None:
        num_images = len({g.image_id for g in gts} | {d.image_id for d in dets})
    points = []
    for t in sorted(thresholds, reverse=True):
        kept = [d for d in dets if d.score >= t]
        match = match_detections(kept, gts, iou_threshold)
        points.append(
            FrocPoint(
                avg_false_positives_per_image=match.num_fp / num_images,
                recall=recall(match),
            )
        )
    return points


def count_negative_detections(
    dets: Sequence[Detection],
    negative_image_ids: set[str],
    threshold: float,
) -> int:
    """Detections scoring at or above threshold on known logo-free images."""
    return sum(
        1 for d in dets if d.score >= threshold and d.image_id in negative_image_ids
    )


def end_to_end_map(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
    score_threshold: float | None = None,
) -> tuple[dict[Hashable, float], float]:
    """Class-wise AP and its unweighted mean over classes with ground truth.

    Detections are evaluated only against ground truths of their own
    class; the optional score_threshold drops low-confidence detections
    before matching. Detection scores should already combine detector
    and recognizer confidence.
    """
    classes: list[Hashable] = []
    for gt in gts:
        if gt.class_label is None:
            raise ValueError("every ground truth needs a class_label for mAP")
        if gt.class_label not in classes:
            classes.append(gt.class_label)
    if not classes:
        raise ValueError("mAP needs at least one class with ground truth")
    if any(d.class_label is None for d in dets):
        raise ValueError("every detection needs a class_label for mAP")

    per_class: dict[Hashable, float] = {}
    for cls in classes:
        cls_dets = [d for d in dets if d.class_label == cls]
        if score_threshold is not None:
            cls_dets = [d for d in cls_dets if d.score >= score_threshold]
        cls_gts = [g for g in gts if g.class_label == cls]
        match = match_detections(cls_dets, cls_gts, iou_threshold)
        flagged = [(d.score, hit) for d, hit in zip(cls_dets, match.tp)]
        per_class[cls] = average_precision(flagged, len(cls_gts))
    mean_ap = sum(per_class.values()) / len(per_class)
    return per_class, mean_ap
