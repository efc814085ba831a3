"""Named deterministic random streams.

One generator per purpose (init, dropout, masking, data order, ...) so that
changing how one consumer draws randomness never perturbs the others.
"""

import zlib

import numpy as np


class RngStreams:
    """Factory of independent, reproducible generators keyed by name."""

    def __init__(self, seed):
        self.seed = int(seed)

    def stream(self, name):
        tag = zlib.crc32(name.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence([self.seed, tag]))
