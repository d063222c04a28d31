"""Seeded random streams.

Every stochastic component draws from a counter-based Philox generator keyed
by a root seed plus an arbitrary tuple of integers, so sequence ``i`` of a
dataset always sees the same stream regardless of generation order.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(0 if rng is None else rng)
