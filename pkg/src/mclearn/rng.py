"""Named, reproducible random streams.

Every stochastic component draws from its own counter-based Philox stream,
keyed by (seed, crc32(stream name)). Streams are independent, so e.g. the
mask sampler consuming draws never shifts the data-shuffling sequence. This
is what makes "same seed, same result" hold bitwise across procedures that
differ only in which streams they touch.
"""

import zlib

import numpy as np
from numpy.random import Generator, Philox


def stream(seed, name):
    """Return a fresh Generator for the (seed, name) stream."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())], dtype=np.uint64)
    return Generator(Philox(key=key))
