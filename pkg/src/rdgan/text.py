"""Sentence encoding: a deterministic raw embedding plus trainable projection.

The raw encoder is a hashed bag-of-words random projection standing in for
a heavyweight pretrained sentence model behind the same interface: tokens
are hashed to rows of a seeded Gaussian codebook, the rows are averaged and
the result L2-normalized. It is a pure function of (sentence, dim, seed),
reproducible across processes and platforms. A trainable linear projection
then maps the raw vector down to the condition dimension; the generator and
discriminator each own their own projection.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError
from .ops import linear
from .rng import Rng
from .tensor import Tensor

# one codebook row per hash bucket; collisions just share a direction
BUCKETS = 4096


@dataclass
class RawTextEmbedding:
    values: np.ndarray
    source_sentence: str


@dataclass
class ConditionVector:
    values: Tensor


def _token_bucket(token: str) -> int:
    # stable across processes: the builtin hash() is salted per run
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % BUCKETS


@dataclass
class TextEncoder:
    """Deterministic sentence-to-vector stub."""

    dim: int = 64
    seed: int = 0x7E57
    _codebook: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._codebook = Rng(self.seed).normal((BUCKETS, self.dim), std=1.0, dtype=np.float32)

    def encode_text(self, sentence: str) -> RawTextEmbedding:
        tokens = sentence.lower().split()
        if not tokens:
            raise InputError(f"cannot encode an empty sentence: {sentence!r}")
        rows = np.stack([self._codebook[_token_bucket(tok)] for tok in tokens])
        mean = rows.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm > 0:
            mean = mean / norm
        return RawTextEmbedding(values=mean.astype(np.float32), source_sentence=sentence)

    def encode_batch(self, sentences: list[str]) -> np.ndarray:
        return np.stack([self.encode_text(s).values for s in sentences])


def project_condition(e: RawTextEmbedding, proj: Tensor) -> ConditionVector:
    """Map a raw embedding through a trainable (cond_dim, raw_dim) matrix."""
    if e.values.shape != (proj.shape[1],):
        raise ShapeError(f"project_condition: embedding dim {e.values.shape[0]} vs projection {tuple(proj.shape)}")
    x = Tensor(e.values.reshape(1, -1).astype(proj.dtype))
    out = linear(x, proj)
    from .tensor import reshape

    return ConditionVector(values=reshape(out, (proj.shape[0],)))


def project_batch(raw: np.ndarray, proj: Tensor) -> Tensor:
    """Batched projection: (N, raw_dim) embeddings to (N, cond_dim)."""
    if raw.ndim != 2 or raw.shape[1] != proj.shape[1]:
        raise ShapeError(f"project_batch: embeddings {tuple(raw.shape)} vs projection {tuple(proj.shape)}")
    return linear(Tensor(raw.astype(proj.dtype)), proj)
