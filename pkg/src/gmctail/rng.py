"""Counter-based random streams.

Every replica gets its own Philox stream whose key is derived from the master
seed and whose counter block is the replica index, so a given ``(seed,
replica)`` pair always reproduces the same draws no matter how the work is
split between workers.
"""
from __future__ import annotations

import functools
import zlib
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


def _tag_word(tag):
    if isinstance(tag, int):
        return tag & _U64
    return zlib.crc32(str(tag).encode()) & _U64


@dataclass(frozen=True)
class RngPolicy:
    """Master seed plus the stream-derivation rule.

    Parameters
    ----------
    seed : int
        Master seed (mandatory, 64 bit).
    tag : str or int
        Namespace separating unrelated experiments that share a seed.
    """

    seed: int
    tag: str | int = 0

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise TypeError("seed must be an integer")
        if not 0 <= int(self.seed) <= _U64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @functools.cached_property
    def _key(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(_tag_word(self.tag),))
        return ss.generate_state(2, dtype=np.uint64)

    def key(self):
        return self._key.copy()

    def generator(self, replica: int) -> np.random.Generator:
        """Independent generator for replica ``replica``."""
        if replica < 0:
            raise ValueError("replica index must be non-negative")
        counter = np.array([0, 0, 0, replica], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def child(self, tag) -> "RngPolicy":
        """Policy for a sub-experiment; streams never collide with the parent's."""
        return RngPolicy(self.seed, f"{self.tag}/{tag}")


def as_policy(rng) -> RngPolicy:
    if isinstance(rng, RngPolicy):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngPolicy(int(rng))
    raise TypeError(f"expected RngPolicy or int seed, got {type(rng).__name__}")


def chunked(n: int, chunk: int):
    """Yield ``(chunk_index, start, stop)`` for fixed-size chunks of ``range(n)``."""
    for k, start in enumerate(range(0, n, chunk)):
        yield k, start, min(start + chunk, n)
