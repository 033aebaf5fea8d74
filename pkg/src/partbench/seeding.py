"""Deterministic RNG streams derived from integer key paths.

Every random draw in the package flows through a numpy SeedSequence built
from (namespace, key...) integers, so any benchmark run is a pure function
of its configured seeds regardless of execution order or parallelism.
"""
from __future__ import annotations

import numpy as np

# namespace tags keep unrelated streams decorrelated
NS_ASSET = 11
NS_INIT = 12
NS_BACKGROUND = 13
NS_EPISODE = 14
NS_POLICY = 15
NS_CORRUPT = 16


def _canon(key: int) -> int:
    # SeedSequence entropy must be non-negative
    key = int(key)
    return key if key >= 0 else key + (1 << 64)


def sequence_for(*keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([_canon(k) for k in keys])


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(sequence_for(*keys)))


def seed_for(*keys: int) -> int:
    """Collapse a key path into a single u64, for handing to policies or clients."""
    return int(sequence_for(*keys).generate_state(1, np.uint64)[0])
