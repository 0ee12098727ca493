"""Splittable, counter-based random streams.

Every stream is a ``numpy.random.SeedSequence`` identified by a master seed
and a spawn key; the bits come from Philox, so a (seed, key, chunk) triple
always yields the same words regardless of how work is scheduled.
"""
import zlib

import numpy as np


def _label(x):
    if isinstance(x, (int, np.integer)):
        if x < 0:
            raise ValueError("stream labels must be non-negative")
        return int(x)
    return zlib.crc32(str(x).encode())


class Stream:
    """A named position in the stream tree rooted at ``seed``."""

    __slots__ = ("seed", "key")

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)

    def __repr__(self):
        return f"Stream(seed={self.seed}, key={self.key})"

    def __eq__(self, other):
        return isinstance(other, Stream) and (self.seed, self.key) == (other.seed, other.key)

    def __hash__(self):
        return hash((self.seed, self.key))

    def split(self, *labels):
        return Stream(self.seed, self.key + tuple(_label(x) for x in labels))

    def seed_sequence(self):
        return np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)

    def bit_generator(self):
        return np.random.Philox(self.seed_sequence())

    def generator(self):
        return np.random.Generator(self.bit_generator())

    def words(self, n):
        """``n`` raw uint64 words."""
        return self.bit_generator().random_raw(int(n)).astype(np.uint64, copy=False)

    def chunk_words(self, chunk, rows, cols):
        return self.split("chunk", chunk).words(rows * cols).reshape(rows, cols)
