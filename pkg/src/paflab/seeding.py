"""Deterministic RNG substreams derived from one experiment seed.

Every source of randomness (weight init, data generation, attack noise)
draws from its own named stream so components stay independently
reproducible: consuming attack randomness never shifts data shuffling.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {"init": 0, "data": 1, "attack": 2, "eval": 3, "sweep": 4}


def substream(seed: int, stream: str, *key: int) -> np.random.Generator:
    """Generator for the named stream, optionally refined by integer keys."""
    return np.random.default_rng(np.random.SeedSequence([_STREAMS[stream], int(seed), *map(int, key)]))


def per_sample_rng(seed: int, index: int, stream: str = "attack") -> np.random.Generator:
    """Attack-style per-sample generator keyed by seed XOR sample index."""
    return np.random.default_rng(np.random.SeedSequence([_STREAMS[stream], int(seed) ^ int(index)]))


def derive_seed(seed: int, *key: int) -> int:
    """Stable integer sub-seed for handing to components that reseed."""
    ss = np.random.SeedSequence([int(seed), *map(int, key)])
    return int(ss.generate_state(1, np.uint32)[0])
