"""Seeded randomness.

Every stream in this package is a NumPy ``Generator`` over the PCG64 bit
generator, keyed by a root seed plus an integer path (via ``SeedSequence``
spawn keys). Derived streams are independent of worker scheduling, so corpora
and evaluations are reproducible for a fixed seed regardless of parallelism.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng"]


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Create the PCG64 stream identified by ``seed`` and an integer path.

    ``make_rng(seed)`` is the root stream; ``make_rng(seed, 3, i)`` is the
    i-th substream of branch 3. Identical arguments always yield identical
    streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
