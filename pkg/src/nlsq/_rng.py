"""Counter-based random streams keyed by (seed, stream id)."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``.

    Independent streams make batch results reproducible regardless of how
    batches are scheduled across workers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def batch_sizes(count: int, batch: int) -> list[int]:
    if count < 0:
        raise ValueError("count must be nonnegative")
    sizes = [batch] * (count // batch)
    if count % batch:
        sizes.append(count % batch)
    return sizes
