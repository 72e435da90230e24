"""Embedding losses and their analytic gradients.

Every loss works on plain Euclidean distance (not squared) and reports
gradients with respect to the query embedding and, where involved, the
proxies. The gradient of ||u - v|| is undefined at u == v; the
subgradient 0 is used there throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Sequence

import numpy as np


class NegativeAggregation(Enum):
    """How per-negative-proxy hinges combine into one loss value."""

    MEAN = "mean"
    SUM = "sum"
    MIN_DISTANCE_ONLY = "min_distance_only"


@dataclass(frozen=True)
class LossConfig:
    """Knobs shared by the hinge-style losses.

    margin: required gap between anchor-negative and anchor-positive
        distances before the hinge releases.
    margin_beta: fixed distance offset of the margin baseline loss.
    nca_include_positive: add the positive proxy to the NCA softmax
        denominator instead of summing negatives only.
    """

    margin: float = 0.2
    negative_aggregation: NegativeAggregation = NegativeAggregation.MEAN
    margin_beta: float = 1.2
    nca_include_positive: bool = False

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.margin_beta <= 0:
            raise ValueError(f"margin_beta must be > 0, got {self.margin_beta}")


@dataclass
class ProxySet:
    """One learned proxy embedding per class, all sharing one norm."""

    class_ids: list
    proxies: np.ndarray  # (num_classes, dim)
    norm: float = 1.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.proxies = np.asarray(self.proxies, dtype=np.float64)
        if len(self.class_ids) != len(set(self.class_ids)):
            raise ValueError("class_ids must be distinct")
        if self.proxies.ndim != 2 or self.proxies.shape[0] != len(self.class_ids):
            raise ValueError(
                f"need one proxy per class: {len(self.class_ids)} classes, "
                f"proxies shape {self.proxies.shape}"
            )
        if not np.all(np.isfinite(self.proxies)):
            raise ValueError("proxies must be finite")
        if self.norm <= 0:
            raise ValueError(f"norm must be positive, got {self.norm}")
        self._index = {c: i for i, c in enumerate(self.class_ids)}

    @classmethod
    def initialize(
        cls, class_ids: Sequence[Hashable], dim: int, norm: float = 1.0, seed: int = 0
    ) -> "ProxySet":
        """Seeded Gaussian proxies projected onto the shared-norm sphere."""
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((len(class_ids), dim))
        raw *= norm / np.linalg.norm(raw, axis=1, keepdims=True)
        return cls(list(class_ids), raw, norm)

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def dim(self) -> int:
        return self.proxies.shape[1]

    def index_of(self, label: Hashable) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"unknown class label {label!r}") from None

    def max_norm_deviation(self) -> float:
        """Largest relative deviation of any proxy norm from the shared norm."""
        norms = np.linalg.norm(self.proxies, axis=1)
        return float(np.max(np.abs(norms - self.norm) / self.norm))


@dataclass
class LossResult:
    """Loss value plus gradients; only the slots a loss touches are set.

    grad_proxies rows align with ProxySet.class_ids and are zero for
    proxies the loss does not involve.
    """

    value: float
    grad_x: np.ndarray
    grad_y: np.ndarray | None = None
    grad_z: np.ndarray | None = None
    grad_proxies: np.ndarray | None = None


@dataclass
class CrossEntropyResult:
    value: float
    grad_logits: np.ndarray


def euclidean_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Plain Euclidean distance between two equal-dimension vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.linalg.norm(u - v))


def _unit_diff(u: np.ndarray, v: np.ndarray, d: float) -> np.ndarray:
    """Gradient of d(u, v) with respect to u; zero subgradient at d == 0."""
    if d == 0.0:
        return np.zeros_like(u)
    return (u - v) / d


def triplet_loss(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, margin: float = 0.2
) -> LossResult:
    """Hinge on anchor-positive vs anchor-negative distance with a margin.

    value = max(0, d(x, y) + margin - d(x, z)); all gradients are zero
    when the hinge is inactive.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    d_xy = euclidean_distance(x, y)
    d_xz = euclidean_distance(x, z)
    raw = d_xy + margin - d_xz
    if raw <= 0.0:
        zero = np.zeros_like(x)
        return LossResult(0.0, zero, zero.copy(), zero.copy())
    u_xy = _unit_diff(x, y, d_xy)
    u_xz = _unit_diff(x, z, d_xz)
    return LossResult(
        value=float(raw),
        grad_x=u_xy - u_xz,
        grad_y=-u_xy,
        grad_z=u_xz,
    )


def proxy_nca_loss(
    x: np.ndarray,
    label: Hashable,
    proxies: ProxySet,
    include_positive: bool = False,
) -> LossResult:
    """Softmax loss pulling x toward its class proxy, repelling the rest.

    value = -log(exp(-d(x, p_label)) / sum_z exp(-d(x, p_z))) where z
    ranges over the negative classes; set include_positive to also count
    the positive proxy in the denominator. Computed via a stable
    log-sum-exp.
    """
    x = np.asarray(x, dtype=np.float64)
    pos = proxies.index_of(label)
    if proxies.num_classes < 2:
        raise ValueError("proxy_nca_loss needs at least one negative class")
    if x.shape != (proxies.dim,):
        raise ValueError(f"dimension mismatch: x {x.shape} vs proxies dim {proxies.dim}")

    dists = np.linalg.norm(proxies.proxies - x[None, :], axis=1)
    if include_positive:
        denom_idx = np.arange(proxies.num_classes)
    else:
        denom_idx = np.array([i for i in range(proxies.num_classes) if i != pos])

    neg_logits = -dists[denom_idx]
    shift = np.max(neg_logits)
    exp_shifted = np.exp(neg_logits - shift)
    lse = shift + np.log(np.sum(exp_shifted))
    value = dists[pos] + lse
    weights = exp_shifted / np.sum(exp_shifted)

    # unit directions (x - p_c) / d_c, zero where d_c == 0
    units = np.zeros_like(proxies.proxies)
    nonzero = dists > 0.0
    units[nonzero] = (x[None, :] - proxies.proxies[nonzero]) / dists[nonzero, None]

    grad_x = units[pos] - np.einsum("c,cd->d", weights, units[denom_idx])
    grad_proxies = np.zeros_like(proxies.proxies)
    grad_proxies[denom_idx] = weights[:, None] * units[denom_idx]
    grad_proxies[pos] -= units[pos]
    return LossResult(value=float(value), grad_x=grad_x, grad_proxies=grad_proxies)


def proxy_triplet_loss(
    x: np.ndarray,
    label: Hashable,
    proxies: ProxySet,
    cfg: LossConfig | None = None,
) -> LossResult:
    """Triplet hinge against proxies: positive proxy vs every negative proxy.

    Each negative class z contributes h_z = max(0, d(x, p_label) + margin
    - d(x, p_z)); cfg.negative_aggregation picks mean, sum, or the hinge
    of the closest negative proxy only.
    """
    cfg = cfg or LossConfig()
    x = np.asarray(x, dtype=np.float64)
    pos = proxies.index_of(label)
    if proxies.num_classes < 2:
        raise ValueError("proxy_triplet_loss needs at least one negative class")
    if x.shape != (proxies.dim,):
        raise ValueError(f"dimension mismatch: x {x.shape} vs proxies dim {proxies.dim}")

    dists = np.linalg.norm(proxies.proxies - x[None, :], axis=1)
    neg_idx = np.array([i for i in range(proxies.num_classes) if i != pos])
    d_pos = dists[pos]
    hinges = np.maximum(0.0, d_pos + cfg.margin - dists[neg_idx])

    agg = cfg.negative_aggregation
    if agg is NegativeAggregation.MEAN:
        weights = np.full(len(neg_idx), 1.0 / len(neg_idx))
    elif agg is NegativeAggregation.SUM:
        weights = np.ones(len(neg_idx))
    elif agg is NegativeAggregation.MIN_DISTANCE_ONLY:
        weights = np.zeros(len(neg_idx))
        weights[int(np.argmin(dists[neg_idx]))] = 1.0
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown aggregation {agg}")
    value = float(np.sum(weights * hinges))

    u_pos = _unit_diff(x, proxies.proxies[pos], d_pos)
    grad_x = np.zeros_like(x)
    grad_proxies = np.zeros_like(proxies.proxies)
    for w, i, h in zip(weights, neg_idx, hinges):
        if w == 0.0 or h <= 0.0:
            continue
        u_neg = _unit_diff(x, proxies.proxies[i], dists[i])
        grad_x += w * (u_pos - u_neg)
        grad_proxies[pos] += w * (-u_pos)
        grad_proxies[i] += w * u_neg
    return LossResult(value=value, grad_x=grad_x, grad_proxies=grad_proxies)


def margin_loss(
    x: np.ndarray,
    other: np.ndarray,
    same_class: bool,
    margin: float = 0.2,
    beta: float = 1.2,
) -> LossResult:
    """Contrastive hinge around a fixed distance baseline beta.

    value = max(0, s * (d(x, other) - beta) + margin) with s = +1 for a
    same-class pair and -1 otherwise.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    d = euclidean_distance(x, other)
    sign = 1.0 if same_class else -1.0
    raw = sign * (d - beta) + margin
    if raw <= 0.0:
        zero = np.zeros_like(x)
        return LossResult(0.0, zero, zero.copy())
    u = _unit_diff(x, other, d)
    return LossResult(value=float(raw), grad_x=sign * u, grad_y=-sign * u)


def cross_entropy_loss(logits: np.ndarray, label: int) -> CrossEntropyResult:
    """Negative log softmax probability of the labeled class.

    Gradient with respect to the logits is softmax(logits) minus the
    one-hot label vector.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("logits must be a nonempty vector")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    shift = np.max(logits)
    exps = np.exp(logits - shift)
    log_z = shift + np.log(np.sum(exps))
    value = log_z - logits[label]
    grad = exps / np.sum(exps)
    grad[label] -= 1.0
    return CrossEntropyResult(value=float(value), grad_logits=grad)
