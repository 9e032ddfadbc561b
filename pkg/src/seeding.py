"""
Named random streams derived from a single 64-bit seed.

Every consumer asks for a stream by purpose ("bc", "sarsa", "eval", ...); the
stream is spawned from the root SeedSequence with a spawn key derived from the
name, so adding a new consumer never shifts the draws of existing ones.
"""
import zlib
from typing import Dict

import numpy as np


class RandomStreams:
    """Deterministic family of numpy Generators keyed by name."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._cache: Dict[str, np.random.Generator] = {}

    def sequence(self, name: str) -> np.random.SeedSequence:
        key = zlib.crc32(name.encode("utf-8"))
        return np.random.SeedSequence(self.seed, spawn_key=(key,))

    def generator(self, name: str) -> np.random.Generator:
        """Same name, same Generator object for the lifetime of this instance."""
        if name not in self._cache:
            self._cache[name] = np.random.default_rng(self.sequence(name))
        return self._cache[name]

    def fresh(self, name: str) -> np.random.Generator:
        """A new Generator at the start of the named stream."""
        return np.random.default_rng(self.sequence(name))


def spawn(rng: np.random.Generator, count: int) -> list:
    """Split child generators off a parent generator, deterministically."""
    seeds = rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)
    return [np.random.default_rng(int(s)) for s in seeds]
