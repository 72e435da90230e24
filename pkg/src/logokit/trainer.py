"""Desk-scale embedder training on precomputed feature vectors.

The embedder is a linear map or a one-hidden-layer MLP whose output is
projected onto a fixed-norm sphere; class proxies live on the same
sphere and are learned jointly with the embedder by Adam. Feature
vectors stand in for cropped image regions, so everything here runs in
seconds on one core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Hashable, Sequence

import numpy as np

from logokit import losses
from logokit.losses import LossConfig, LossResult, ProxySet

XAVIER_MAGNITUDE = 2.0


class Architecture(Enum):
    LINEAR = "linear"
    MLP1 = "mlp1"


class LossKind(Enum):
    PROXY_TRIPLET = "proxy_triplet"
    PROXY_NCA = "proxy_nca"
    CROSS_ENTROPY = "cross_entropy"
    MARGIN = "margin"
    TRIPLET = "triplet"


PROXY_FREE_LOSSES = (LossKind.MARGIN, LossKind.TRIPLET)
NEEDS_NEGATIVES = (LossKind.PROXY_TRIPLET, LossKind.PROXY_NCA, LossKind.TRIPLET)


@dataclass
class EmbedderParams:
    """Weights of the feature-to-embedding map."""

    arch: Architecture
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        if self.w1.ndim != 2 or self.b1.shape != (self.w1.shape[0],):
            raise ValueError("w1 must be 2-D with b1 matching its output size")
        if self.arch is Architecture.MLP1:
            if self.w2 is None or self.b2 is None:
                raise ValueError("MLP1 requires w2 and b2")
            self.w2 = np.asarray(self.w2, dtype=np.float64)
            self.b2 = np.asarray(self.b2, dtype=np.float64)
            if self.w2.shape[1] != self.w1.shape[0] or self.b2.shape != (self.w2.shape[0],):
                raise ValueError("w2/b2 shapes inconsistent with w1")
        elif self.w2 is not None or self.b2 is not None:
            raise ValueError("LINEAR takes no second layer")
        for t in self.tensors().values():
            if not np.all(np.isfinite(t)):
                raise ValueError("parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_emb(self) -> int:
        return self.w1.shape[0] if self.arch is Architecture.LINEAR else self.w2.shape[0]

    @property
    def hidden(self) -> int | None:
        return None if self.arch is Architecture.LINEAR else self.w1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Live references to every parameter tensor, keyed by name."""
        out = {"w1": self.w1, "b1": self.b1}
        if self.arch is Architecture.MLP1:
            out["w2"] = self.w2
            out["b2"] = self.b2
        return out

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(
            self.arch,
            self.w1.copy(),
            self.b1.copy(),
            None if self.w2 is None else self.w2.copy(),
            None if self.b2 is None else self.b2.copy(),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.8
    lr_decay_every: int = 20
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss: LossKind = LossKind.PROXY_TRIPLET
    loss_config: LossConfig = field(default_factory=LossConfig)
    proxy_norm: float = 1.0
    arch: Architecture = Architecture.LINEAR
    hidden: int = 64
    embedding_dim: int = 128
    project_samples: bool = True
    project_proxies: bool = True

    def __post_init__(self) -> None:
        for name in ("learning_rate", "lr_decay_factor", "proxy_norm", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every < 1:
            raise ValueError("batch_size/epochs/lr_decay_every out of range")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class LabeledFeatureSet:
    """Rows of (feature vector, class label) with a fixed label vocabulary."""

    features: np.ndarray  # (n, d_in)
    labels: list
    class_ids: list = None
    source_ids: list[str] | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.labels) != self.features.shape[0]:
            raise ValueError("one label per feature row required")
        if self.class_ids is None:
            self.class_ids = sorted(set(self.labels))
        missing = set(self.labels) - set(self.class_ids)
        if missing:
            raise ValueError(f"labels outside vocabulary: {sorted(missing)}")
        if self.source_ids is not None and len(self.source_ids) != len(self.labels):
            raise ValueError("one source_id per row required")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]


@dataclass
class ForwardCache:
    """Intermediates kept by forward for the manual backward pass."""

    features: np.ndarray
    pre_projection: np.ndarray
    hidden_pre: np.ndarray | None
    hidden: np.ndarray | None
    norm: float | None


def init_params(
    arch: Architecture,
    d_in: int,
    hidden: int,
    d_emb: int,
    seed: int,
    magnitude: float = XAVIER_MAGNITUDE,
) -> EmbedderParams:
    """Xavier-uniform weights with the given magnitude; zero biases.

    Each weight is uniform in [-a, a] with
    a = magnitude * sqrt(3 / ((fan_in + fan_out) / 2)).
    """
    if d_in < 1 or d_emb < 1 or (arch is Architecture.MLP1 and hidden < 1):
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def xavier(fan_out: int, fan_in: int) -> np.ndarray:
        a = magnitude * np.sqrt(3.0 / ((fan_in + fan_out) / 2.0))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    if arch is Architecture.LINEAR:
        return EmbedderParams(arch, xavier(d_emb, d_in), np.zeros(d_emb))
    return EmbedderParams(
        arch,
        xavier(hidden, d_in),
        np.zeros(hidden),
        xavier(d_emb, hidden),
        np.zeros(d_emb),
    )


def project_norm(v: np.ndarray, n: float) -> np.ndarray:
    """Rescale v onto the sphere of radius n."""
    v = np.asarray(v, dtype=np.float64)
    r = float(np.linalg.norm(v))
    if r <= 1e-12:
        raise ValueError(f"cannot project near-zero vector (norm {r:.3e})")
    return v * (n / r)


def forward(
    params: EmbedderParams, features: np.ndarray, norm: float | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Map one feature vector to its embedding.

    When `norm` is given the raw output is projected onto the sphere of
    that radius; the cache carries everything backward() needs.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (params.d_in,):
        raise ValueError(f"feature shape {f.shape} does not match d_in {params.d_in}")
    if params.arch is Architecture.LINEAR:
        pre = params.w1 @ f + params.b1
        hidden_pre = hidden = None
    else:
        hidden_pre = params.w1 @ f + params.b1
        hidden = np.maximum(hidden_pre, 0.0)
        pre = params.w2 @ hidden + params.b2
    emb = pre if norm is None else project_norm(pre, norm)
    return emb, ForwardCache(f, pre, hidden_pre, hidden, norm)


def backward(
    params: EmbedderParams, cache: ForwardCache, grad_embedding: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every embedder tensor."""
    g = np.asarray(grad_embedding, dtype=np.float64)
    if cache.norm is not None:
        v = cache.pre_projection
        r = float(np.linalg.norm(v))
        g = (cache.norm / r) * (g - (g @ v) * v / (r * r))
    if params.arch is Architecture.LINEAR:
        return {"w1": np.outer(g, cache.features), "b1": g}
    grads = {"w2": np.outer(g, cache.hidden), "b2": g}
    g_hidden = (params.w2.T @ g) * (cache.hidden_pre > 0.0)
    grads["w1"] = np.outer(g_hidden, cache.features)
    grads["b1"] = g_hidden
    return grads


def effective_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step-decayed learning rate for the given zero-based epoch."""
    return cfg.learning_rate * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
    epoch: int,
) -> None:
    """One bias-corrected Adam update, in place.

    Decoupled weight decay shrinks each tensor by lr * weight_decay
    before the moment update; the "proxies" tensor, when present, is
    re-projected onto the shared-norm sphere afterwards.
    """
    lr = effective_lr(cfg, epoch)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if cfg.weight_decay > 0.0:
            p -= lr * cfg.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - cfg.beta1) * (g - m)
        v += (1.0 - cfg.beta2) * (g * g - v)
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    if cfg.project_proxies and "proxies" in params:
        prox = params["proxies"]
        prox *= cfg.proxy_norm / np.linalg.norm(prox, axis=1, keepdims=True)


def _sample_loss(
    emb: np.ndarray, label: Hashable, proxies: ProxySet, cfg: TrainConfig
) -> LossResult:
    lc = cfg.loss_config
    if cfg.loss is LossKind.PROXY_TRIPLET:
        return losses.proxy_triplet_loss(emb, label, proxies, lc)
    if cfg.loss is LossKind.PROXY_NCA:
        return losses.proxy_nca_loss(
            emb, label, proxies, include_positive=lc.nca_include_positive
        )
    if cfg.loss is LossKind.CROSS_ENTROPY:
        # Distance classifier: logits are negative distances to the proxies.
        dists = np.linalg.norm(proxies.proxies - emb[None, :], axis=1)
        ce = losses.cross_entropy_loss(-dists, proxies.index_of(label))
        units = np.zeros_like(proxies.proxies)
        nz = dists > 0.0
        units[nz] = (emb[None, :] - proxies.proxies[nz]) / dists[nz, None]
        grad_x = -units.T @ ce.grad_logits
        grad_proxies = ce.grad_logits[:, None] * units
        return LossResult(ce.value, grad_x, grad_proxies=grad_proxies)
    raise ValueError(f"{cfg.loss} is not a per-sample proxy objective")


def _pair_partner(labels: Sequence[Hashable], i: int, want_same: bool) -> int | None:
    """Index of the next sample (cyclically) agreeing/disagreeing in label."""
    n = len(labels)
    for step in range(1, n):
        j = (i + step) % n
        if (labels[j] == labels[i]) == want_same:
            return j
    return None


def batch_loss_and_grads(
    params: EmbedderParams,
    proxies: ProxySet,
    features: np.ndarray,
    labels: Sequence[Hashable],
    cfg: TrainConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over one mini-batch and gradients for every tensor.

    Returns grads keyed like EmbedderParams.tensors() plus "proxies".
    Samples are reduced in batch order so results are reproducible.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    sample_norm = cfg.proxy_norm if cfg.project_samples else None

    embs, caches = [], []
    for i in range(n):
        e, c = forward(params, features[i], norm=sample_norm)
        embs.append(e)
        caches.append(c)

    grad_embs = [np.zeros_like(e) for e in embs]
    grad_proxies = np.zeros_like(proxies.proxies)
    total = 0.0

    if cfg.loss in (LossKind.PROXY_TRIPLET, LossKind.PROXY_NCA, LossKind.CROSS_ENTROPY):
        for i in range(n):
            res = _sample_loss(embs[i], labels[i], proxies, cfg)
            total += res.value
            grad_embs[i] += res.grad_x
            grad_proxies += res.grad_proxies
        scale = 1.0 / n
    elif cfg.loss is LossKind.MARGIN:
        for i in range(n):
            j = (i + 1) % n
            res = losses.margin_loss(
                embs[i],
                embs[j],
                labels[i] == labels[j],
                margin=cfg.loss_config.margin,
                beta=cfg.loss_config.margin_beta,
            )
            total += res.value
            grad_embs[i] += res.grad_x
            grad_embs[j] += res.grad_y
        scale = 1.0 / n
    elif cfg.loss is LossKind.TRIPLET:
        count = 0
        for i in range(n):
            j = _pair_partner(labels, i, want_same=True)
            k = _pair_partner(labels, i, want_same=False)
            if j is None or k is None:
                continue
            res = losses.triplet_loss(embs[i], embs[j], embs[k], cfg.loss_config.margin)
            count += 1
            total += res.value
            grad_embs[i] += res.grad_x
            grad_embs[j] += res.grad_y
            grad_embs[k] += res.grad_z
        scale = 1.0 / count if count else 0.0
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown loss {cfg.loss}")

    grads = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    for i in range(n):
        if not np.any(grad_embs[i]):
            continue
        for name, g in backward(params, caches[i], scale * grad_embs[i]).items():
            grads[name] += g
    grads["proxies"] = scale * grad_proxies
    return scale * total, grads


StepCallback = Callable[[int, int, EmbedderParams, ProxySet, OptimizerState], None]


def fit(
    data: LabeledFeatureSet,
    cfg: TrainConfig,
    step_callback: StepCallback | None = None,
) -> tuple[EmbedderParams, ProxySet, list[float]]:
    """Train embedder and proxies jointly; returns per-epoch mean losses.

    Fully deterministic given cfg.seed: parameter init, proxy init, and
    the per-epoch shuffles each draw from their own seeded generator.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if cfg.loss in NEEDS_NEGATIVES and len(data.class_ids) < 2:
        raise ValueError(f"{cfg.loss.value} requires at least 2 classes")

    params = init_params(cfg.arch, data.d_in, cfg.hidden, cfg.embedding_dim, cfg.seed)
    proxies = ProxySet.initialize(
        data.class_ids, cfg.embedding_dim, norm=cfg.proxy_norm, seed=cfg.seed + 1
    )
    shuffle_rng = np.random.default_rng(cfg.seed + 2)

    all_tensors = {**params.tensors(), "proxies": proxies.proxies}
    state = OptimizerState.for_params(all_tensors)

    history: list[float] = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, grads = batch_loss_and_grads(
                params, proxies, data.features[idx], [data.labels[i] for i in idx], cfg
            )
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {b}: {loss}")
            adam_step(all_tensors, grads, state, cfg, epoch)
            batch_losses.append(loss)
            if step_callback is not None:
                step_callback(epoch, b, params, proxies, state)
        history.append(float(np.mean(batch_losses)))
    return params, proxies, history


def embed(params: EmbedderParams, features: np.ndarray, norm: float | None) -> np.ndarray:
    """Embed a batch of feature rows; returns an (n, d_emb) array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    return np.stack([forward(params, f, norm=norm)[0] for f in features])


def loss_kind_from_string(name: str) -> LossKind:
    try:
        return LossKind(name.lower())
    except ValueError:
        valid = ", ".join(k.value for k in LossKind)
        raise ValueError(f"unknown loss {name!r}; expected one of: {valid}") from None
