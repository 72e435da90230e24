"""Exact k-NN search over embeddings and few-shot identification metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

IndexEntry = tuple[np.ndarray, Hashable, str]  # (embedding, label, source_id)


@dataclass(frozen=True)
class Neighbor:
    source_id: str
    label: Hashable
    distance: float


@dataclass
class AnchorIndex:
    """Immutable exact-search index over labeled embeddings."""

    embeddings: np.ndarray  # (n, dim)
    labels: list
    source_ids: list[str]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def build_index(entries: Sequence[IndexEntry]) -> AnchorIndex:
    """Stack (embedding, label, source_id) entries into an index, verbatim."""
    if len(entries) == 0:
        raise ValueError("cannot build an index from zero entries")
    vecs = [np.asarray(e[0], dtype=np.float64) for e in entries]
    dim = vecs[0].shape
    if any(v.shape != dim for v in vecs) or len(dim) != 1:
        raise ValueError("all embeddings must share one dimension")
    return AnchorIndex(
        embeddings=np.stack(vecs),
        labels=[e[1] for e in entries],
        source_ids=[e[2] for e in entries],
    )


def knn(index: AnchorIndex, query: np.ndarray, k: int) -> list[Neighbor]:
    """The min(k, n) nearest entries by Euclidean distance, ascending.

    Equidistant entries keep their insertion order (stable sort).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ValueError(f"query shape {q.shape} does not match index dim {index.dim}")
    dists = np.linalg.norm(index.embeddings - q[None, :], axis=1)
    order = np.argsort(dists, kind="stable")[: min(k, len(index))]
    return [Neighbor(index.source_ids[i], index.labels[i], float(dists[i])) for i in order]


def top1_recall(
    index: AnchorIndex, queries: Sequence[tuple[np.ndarray, Hashable]]
) -> float:
    """Fraction of queries whose nearest neighbor carries the true label."""
    if len(queries) == 0:
        raise ValueError("top1_recall needs at least one query")
    hits = sum(1 for q, label in queries if knn(index, q, 1)[0].label == label)
    return hits / len(queries)


def classify_topk(
    index: AnchorIndex, query: np.ndarray, k: int
) -> tuple[Hashable, float]:
    """Majority vote over the k nearest neighbors.

    Vote ties break toward the label with the smaller mean distance,
    then toward the label seen earliest in the neighbor list. The score
    is the winning label's vote fraction, in (0, 1].
    """
    neighbors = knn(index, query, k)
    votes: dict[Hashable, int] = {}
    dist_sum: dict[Hashable, float] = {}
    first_seen: dict[Hashable, int] = {}
    for rank, nb in enumerate(neighbors):
        votes[nb.label] = votes.get(nb.label, 0) + 1
        dist_sum[nb.label] = dist_sum.get(nb.label, 0.0) + nb.distance
        first_seen.setdefault(nb.label, rank)
    winner = min(
        votes,
        key=lambda lab: (-votes[lab], dist_sum[lab] / votes[lab], first_seen[lab]),
    )
    return winner, votes[winner] / len(neighbors)


def select_anchors(
    entries: Sequence[IndexEntry], per_class: int
) -> tuple[list[IndexEntry], list[IndexEntry]]:
    """Split entries into the first `per_class` anchors per label and the rest.

    The remainder is what evaluation should query with, keeping anchors
    out of the query pool.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    taken: dict[Hashable, int] = {}
    anchors, rest = [], []
    for entry in entries:
        label = entry[1]
        if taken.get(label, 0) < per_class:
            taken[label] = taken.get(label, 0) + 1
            anchors.append(entry)
        else:
            rest.append(entry)
    return anchors, rest


def precision_recall_curve(
    predictions: Sequence[tuple[float, bool]], positives_total: int
) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) points over a descending score sweep.

    One point per distinct score, counting every prediction at or above
    that score.
    """
    if positives_total < 1:
        raise ValueError("positives_total must be >= 1")
    ranked = sorted(predictions, key=lambda p: -p[0])
    points: list[tuple[float, float]] = []
    tp = fp = 0
    for i, (score, correct) in enumerate(ranked):
        if correct:
            tp += 1
        else:
            fp += 1
        last_of_group = i + 1 == len(ranked) or ranked[i + 1][0] != score
        if last_of_group:
            points.append((tp / positives_total, tp / (tp + fp)))
    return points
