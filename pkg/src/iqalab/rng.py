"""Deterministic random streams.

Every stochastic operation in the package draws from an `RngStream`, a
counter-based Philox generator keyed by ``(seed, stream_id)``.  The same
key reproduces the same draw sequence on any platform, which is what
makes repeated splits, crops and corpus sweeps replayable bit-for-bit.

Derived streams are obtained by mixing integer or string tags into the
key with a splitmix64 hash, so one root seed fans out into independent
streams for splits, images, batches and so on without shared state.
"""

from __future__ import annotations

import copy

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix(*values) -> int:
    """Hash a tuple of ints/strings into a stable 64-bit value."""
    acc = 0x243F6A8885A308D3
    for v in values:
        if isinstance(v, str):
            acc = _splitmix64(acc ^ len(v))
            for b in v.encode("utf-8"):
                acc = _splitmix64(acc ^ b)
        else:
            acc = _splitmix64(acc ^ (int(v) & _MASK64))
    return acc


class RngStream:
    """A reproducible random stream identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def clone(self) -> "RngStream":
        """Copy of this stream including its current position."""
        out = RngStream(self.seed, self.stream_id)
        out._gen.bit_generator.state = copy.deepcopy(self._gen.bit_generator.state)
        return out

    def child(self, *tags) -> "RngStream":
        """Derive an independent stream from this stream's key and tags."""
        return RngStream(mix(self.seed, 0x5EED, *tags),
                         mix(self.stream_id, 0x57EA, *tags))

    # Thin passthroughs so call sites read naturally.
    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def shuffle(self, seq):
        self._gen.shuffle(seq)
