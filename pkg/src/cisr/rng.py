"""Seeded randomness.

Every stochastic routine takes an explicit integer seed and builds a PCG64
generator from it; nothing draws from global state. Child seeds are derived
with ``SeedSequence`` so that (seed, *path) always maps to the same stream.
"""

import numpy as np

_BUFFER = 8192


def make_rng(seed, *path):
    """Return a ``numpy.random.Generator`` for ``seed`` and an optional key path."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_seed(seed, *path):
    """Deterministic 64-bit seed for a sub-task identified by ``path``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


class UniformStream:
    """Buffered U[0, 1) draws for tight Python loops.

    Pulling scalars from a Generator one at a time costs far more than the
    arithmetic in a tabular update, so draws are taken in blocks.
    """

    __slots__ = ("_rng", "_buf", "_i")

    def __init__(self, seed, *path):
        self._rng = make_rng(seed, *path)
        self._buf = []
        self._i = 0

    def __call__(self):
        i = self._i
        if i >= len(self._buf):
            self._buf = self._rng.random(_BUFFER).tolist()
            i = 0
        self._i = i + 1
        return self._buf[i]

    @property
    def generator(self):
        return self._rng
