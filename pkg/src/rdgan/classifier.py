"""Video classification on frozen discriminator features.

A trained discriminator doubles as an unsupervised feature extractor: its
real/fake layer is replaced by a K-way softmax head trained on a labeled
fraction of the data. The head comes in two variants, a full-extent
convolution over the feature maps and a linear map on the flattened
features. Both are the same affine family and carry identical parameter
counts; they differ only in weight layout and therefore in optimization
trajectory.

The discriminator itself is never updated here. Features are computed once
under no tape and cached as plain arrays, so freezing is structural rather
than a flag that could drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .discriminator import D3Config, extract_features
from .errors import ConfigError, ShapeError, UsageError
from .ops import conv3d, cross_entropy, dropout, linear
from .optim import Adam
from .rng import Rng
from .tensor import ParameterSet, Tape, Tensor, add, backward, reshape

HEAD_VARIANTS = ("conv", "linear")
INIT_STD = 0.02


@dataclass(frozen=True)
class HeadConfig:
    """Softmax head shape and training protocol.

    label_fraction selects how much of the training split carries labels;
    the held-out split is never shrunk. Training knobs default to plain
    supervised Adam since the head is a convex-ish problem on frozen
    features, unlike the GAN's lr/beta1 pairing.
    """

    variant: str = "linear"
    class_count: int = 4
    label_fraction: float = 0.125
    dropout: float = 0.5
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.variant not in HEAD_VARIANTS:
            raise ConfigError(f"head variant must be one of {HEAD_VARIANTS}, got {self.variant!r}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError(f"steps and batch_size must be positive, got {self.steps}, {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")


def feature_extents(d_config: D3Config) -> Tuple[int, int, int, int]:
    """(C, T', S, S) of the discriminator's penultimate feature maps."""
    c = d_config.channels[-1]
    return (c, d_config.final_temporal, d_config.final_spatial, d_config.final_spatial)


def init_head(config: HeadConfig, d_config: D3Config, rng: Rng, dtype=np.float32) -> ParameterSet:
    """Fresh head weights under paths head/W and head/b.

    conv variant: kernel (K, C, T', S, S) consumed by a full-extent conv3d.
    linear variant: matrix (K, C*T'*S*S) on the flattened features. Both
    hold K*C*T'*S*S weights plus K biases.
    """
    c, ft, fs, _ = feature_extents(d_config)
    k = config.class_count
    params = ParameterSet()
    if config.variant == "conv":
        shape = (k, c, ft, fs, fs)
    else:
        shape = (k, c * ft * fs * fs)
    params.add("head/W", Tensor(rng.normal(shape, std=INIT_STD, dtype=dtype), requires_grad=True))
    params.add("head/b", Tensor(np.zeros((k,), dtype=dtype), requires_grad=True))
    return params


def head_forward(head: ParameterSet, features: Tensor) -> Tensor:
    """Logits (N, K) from features (N, C, T', S, S); softmax lives in the loss."""
    w = head["head/W"]
    b = head["head/b"]
    single = features.ndim == 4
    if single:
        features = reshape(features, (1,) + tuple(features.shape))
    if features.ndim != 5:
        raise ShapeError(f"head_forward: need (N,C,T,H,W) features, got {tuple(features.shape)}")
    n = features.shape[0]
    k = w.shape[0]
    if w.ndim == 5:
        if tuple(features.shape[1:]) != tuple(w.shape[1:]):
            raise ShapeError(f"head_forward: features {tuple(features.shape)} do not match kernel {tuple(w.shape)}")
        out = conv3d(features, w)  # full extent: one output position per class
        logits = add(reshape(out, (n, k)), b)
    else:
        flat = reshape(features, (n, int(np.prod(features.shape[1:]))))
        if flat.shape[1] != w.shape[1]:
            raise ShapeError(f"head_forward: flattened features {tuple(flat.shape)} do not match matrix {tuple(w.shape)}")
        logits = linear(flat, w, b)
    if single:
        logits = reshape(logits, (k,))
    return logits


def head_param_count(config: HeadConfig, d_config: D3Config) -> int:
    c, ft, fs, _ = feature_extents(d_config)
    return config.class_count * c * ft * fs * fs + config.class_count


def _extract_all_features(
    d_params: ParameterSet,
    d_config: D3Config,
    videos: np.ndarray,
    batch: int = 32,
) -> np.ndarray:
    """Frozen eval-mode features for every video, chunked to bound memory."""
    chunks = []
    for start in range(0, videos.shape[0], batch):
        x = Tensor(videos[start : start + batch])
        chunks.append(extract_features(d_params, d_config, x, mode="eval").data)
    return np.concatenate(chunks, axis=0)


def _split_indices(count: int, config: HeadConfig, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic (labeled training subset, held-out) index split.

    One permutation drives both decisions: the tail is held out, and the
    labeled subset is a prefix of the remaining pool, so smaller fractions
    are nested inside larger ones.
    """
    perm = rng.permutation(count)
    holdout = max(1, int(round(count * config.holdout_fraction)))
    pool = perm[: count - holdout]
    labeled = int(round(pool.size * config.label_fraction))
    if labeled < config.class_count:
        raise ConfigError(
            f"label fraction {config.label_fraction} keeps {labeled} labeled samples, "
            f"fewer than the {config.class_count} classes"
        )
    return pool[:labeled], perm[count - holdout :]


def _train_head_on_features(
    features: np.ndarray,
    labels: np.ndarray,
    config: HeadConfig,
    d_config: D3Config,
    rng: Rng,
) -> Tuple[ParameterSet, float]:
    train_idx, held_idx = _split_indices(features.shape[0], config, rng)
    head = init_head(config, d_config, rng, dtype=features.dtype)
    adam = Adam(head, lr=config.lr, beta1=config.beta1)
    for _ in range(config.steps):
        pick = train_idx[rng.integers(0, train_idx.size, size=config.batch_size)]
        with Tape() as tape:
            x = dropout(Tensor(features[pick]), config.dropout, rng, "train")
            loss = cross_entropy(head_forward(head, x), labels[pick])
            backward(loss)
        tape.release()
        adam.step()
        head.zero_grad()
    logits = head_forward(head, Tensor(features[held_idx]))
    accuracy = float((logits.data.argmax(axis=1) == labels[held_idx]).mean())
    return head, accuracy


def _check_dataset(videos: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    if videos.ndim != 5:
        raise ShapeError(f"classifier: need (N,C,T,H,W) videos, got {tuple(videos.shape)}")
    if labels.shape != (videos.shape[0],):
        raise ShapeError(f"classifier: labels {tuple(labels.shape)} do not match {videos.shape[0]} videos")
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise UsageError(f"classifier: labels must lie in [0, {class_count})")
    return labels


def train_classifier(
    d_params: ParameterSet,
    d_config: D3Config,
    videos: np.ndarray,
    labels: np.ndarray,
    config: HeadConfig,
    seed: int = 0,
) -> Tuple[ParameterSet, float]:
    """Train a softmax head on frozen discriminator features.

    Returns (head weights, held-out accuracy). The labeled subset and the
    80/20 split are functions of the seed alone, so reruns are identical.
    """
    labels = _check_dataset(videos, labels, config.class_count)
    features = _extract_all_features(d_params, d_config, videos)
    return _train_head_on_features(features, labels, config, d_config, Rng(seed))


class SweepRow(NamedTuple):
    fraction: float
    variant: str
    accuracy: float


def label_fraction_sweep(
    d_params: ParameterSet,
    d_config: D3Config,
    videos: np.ndarray,
    labels: np.ndarray,
    fractions: Sequence[float],
    base_config: HeadConfig = HeadConfig(),
    seed: int = 0,
    on_row: Optional[Callable[[SweepRow], None]] = None,
) -> List[SweepRow]:
    """One train_classifier run per (fraction, variant), features shared.

    Every run draws from Rng(seed), so all fractions see the same held-out
    split and nested labeled subsets.
    """
    if list(fractions) != sorted(fractions):
        raise UsageError(f"label_fraction_sweep: fractions must be sorted ascending, got {list(fractions)}")
    labels = _check_dataset(videos, labels, base_config.class_count)
    features = _extract_all_features(d_params, d_config, videos)
    rows: List[SweepRow] = []
    for fraction in fractions:
        for variant in HEAD_VARIANTS:
            config = HeadConfig(
                variant=variant,
                class_count=base_config.class_count,
                label_fraction=fraction,
                dropout=base_config.dropout,
                steps=base_config.steps,
                batch_size=base_config.batch_size,
                lr=base_config.lr,
                beta1=base_config.beta1,
                holdout_fraction=base_config.holdout_fraction,
            )
            _, accuracy = _train_head_on_features(features, labels, config, d_config, Rng(seed))
            row = SweepRow(fraction, variant, accuracy)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    """Plot-ready TSV: fraction <TAB> variant <TAB> accuracy."""
    lines = ["fraction\tvariant\taccuracy"]
    for row in rows:
        lines.append(f"{row.fraction:.6g}\t{row.variant}\t{row.accuracy:.4f}")
    return "\n".join(lines) + "\n"
