"""Synthetic labeled feature sets for experiments and tests."""

from __future__ import annotations

import numpy as np

from logokit.trainer import LabeledFeatureSet


def gaussian_clusters(
    num_classes: int,
    d_in: int,
    points_per_class: int,
    sigma: float = 0.1,
    seed: int = 0,
) -> LabeledFeatureSet:
    """Isotropic Gaussian blobs around unit class centers.

    Center c is the standard basis vector e_c, so centers are unit
    vectors at pairwise distance sqrt(2); points add N(0, sigma^2 I)
    noise. Rows are ordered class by class with stable source ids.
    """
    if num_classes > d_in:
        raise ValueError(f"need d_in >= num_classes, got {d_in} < {num_classes}")
    if num_classes < 1 or points_per_class < 1:
        raise ValueError("num_classes and points_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    centers = np.eye(num_classes, d_in)

    feats, labels, source_ids = [], [], []
    for c in range(num_classes):
        noise = rng.standard_normal((points_per_class, d_in)) * sigma
        feats.append(centers[c][None, :] + noise)
        labels.extend([f"class_{c:02d}"] * points_per_class)
        source_ids.extend(f"class_{c:02d}/{i:04d}" for i in range(points_per_class))
    return LabeledFeatureSet(
        features=np.concatenate(feats, axis=0),
        labels=labels,
        source_ids=source_ids,
    )


def train_test_split(
    data: LabeledFeatureSet, train_per_class: int, seed: int = 0
) -> tuple[LabeledFeatureSet, LabeledFeatureSet]:
    """Per-class split: a seeded shuffle, then the first rows go to train."""
    rng = np.random.default_rng(seed)
    by_class: dict = {}
    for i, lab in enumerate(data.labels):
        by_class.setdefault(lab, []).append(i)
    train_idx, test_idx = [], []
    for lab in data.class_ids:
        rows = by_class.get(lab, [])
        perm = rng.permutation(len(rows))
        shuffled = [rows[p] for p in perm]
        train_idx.extend(shuffled[:train_per_class])
        test_idx.extend(shuffled[train_per_class:])

    def subset(indices: list[int]) -> LabeledFeatureSet:
        return LabeledFeatureSet(
            features=data.features[indices],
            labels=[data.labels[i] for i in indices],
            class_ids=list(data.class_ids),
            source_ids=None
            if data.source_ids is None
            else [data.source_ids[i] for i in indices],
        )

    return subset(train_idx), subset(test_idx)
