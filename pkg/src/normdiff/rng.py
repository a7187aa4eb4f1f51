"""Deterministic counter-based random streams.

Every stochastic draw in the package goes through an :class:`RngStream`,
a thin wrapper over numpy's Philox counter-based bit generator keyed by
``(seed, stream_id)``. The same (seed, stream id, draw sequence) always
reproduces the same values, and child streams derived from distinct key
paths are statistically independent, so per-subject work can be
parallelized or reordered without changing any result.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]

_MASK64 = (1 << 64) - 1


def _derive_stream_id(parent: int, keys: tuple) -> int:
    """Hash a (parent stream, key path) into a fresh 64-bit stream id."""
    h = hashlib.blake2b(digest_size=8)
    h.update(parent.to_bytes(8, "little"))
    for key in keys:
        if isinstance(key, str):
            raw = key.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
        elif isinstance(key, (int, np.integer)):
            h.update(b"i" + (int(key) & _MASK64).to_bytes(8, "little"))
        else:
            raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A named, reproducible stream of pseudorandom draws.

    Draws advance the stream; `child(*keys)` derives an independent
    stream without consuming any state from the parent.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, _derive_stream_id(self.stream_id, keys))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers drawn from the half-open range [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#x})"
