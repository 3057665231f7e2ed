"""Deterministic, splittable random number streams.

Every stochastic routine in this package takes a :class:`NoiseStream` and
derives its own sub-streams from it, so a single integer seed pins down the
whole experiment regardless of execution order or parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["NoiseStream"]


def _key_to_int(key) -> int:
    """Map a path component (int or str) to a stable 64-bit integer."""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream path components must be nonnegative, got {key}")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream path component must be int or str, got {type(key)!r}")


class NoiseStream:
    """A node in a tree of independent PRNG streams.

    The same (seed, path) pair always yields the same variates; distinct
    paths yield statistically independent streams (Philox counter-based
    generator keyed through ``numpy.random.SeedSequence``).
    """

    def __init__(self, seed, _spawn_key: tuple = ()):
        if isinstance(seed, NoiseStream):
            seed = seed._entropy
        self._entropy = seed
        self._spawn_key = tuple(_spawn_key)

    @property
    def path(self) -> tuple:
        return self._spawn_key

    def child(self, *keys) -> "NoiseStream":
        """Derive the sub-stream at the given path below this node."""
        ints = tuple(_key_to_int(k) for k in keys)
        return NoiseStream(self._entropy, self._spawn_key + ints)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self._entropy, spawn_key=self._spawn_key)
        return np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"NoiseStream(seed={self._entropy!r}, path={self._spawn_key!r})"
