"""Deterministic random numbers with a compact 16-byte serializable state.

State is the pair (seed, calls). Every draw opens a fresh numpy Generator
keyed by that pair and bumps the call counter, so restoring the two
integers reproduces the stream exactly; no generator internals (cached
normal values and the like) can leak across a checkpoint boundary.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, UsageError

STATE_BYTES = 16
_U64 = 0xFFFFFFFFFFFFFFFF


class Rng:
    """Counter-based RNG: one numpy PCG64 stream per draw."""

    def __init__(self, seed: int, calls: int = 0):
        self.seed = int(seed) & _U64
        self.calls = int(calls) & _U64

    def __repr__(self):
        return f"Rng(seed={self.seed}, calls={self.calls})"

    def _draw(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.calls,))
        self.calls = (self.calls + 1) & _U64
        return np.random.Generator(np.random.PCG64(seq))

    def normal(self, shape=(), mean=0.0, std=1.0, dtype=np.float32) -> np.ndarray:
        if std < 0:
            raise UsageError(f"std must be >= 0, got {std}")
        out = self._draw().standard_normal(shape) * std + mean
        return np.asarray(out, dtype=dtype)

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float32) -> np.ndarray:
        out = self._draw().uniform(low, high, shape)
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._draw().integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._draw().permutation(n)

    def split(self) -> "Rng":
        """Derive an independent child stream (consumes one draw)."""
        child_seed = int(self._draw().integers(0, 2**63))
        return Rng(child_seed)

    def state_bytes(self) -> bytes:
        return struct.pack("<QQ", self.seed, self.calls)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Rng":
        if len(raw) != STATE_BYTES:
            raise FormatError(f"rng state must be {STATE_BYTES} bytes, got {len(raw)}")
        seed, calls = struct.unpack("<QQ", raw)
        return cls(seed, calls)
