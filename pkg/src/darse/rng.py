"""Named, independent random streams.

Every random draw in a run comes from ``stream(seed, purpose, *keys)`` so that
changing, say, the gossip schedule never perturbs the noise realization.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "partition": 1,
    "selection": 2,
    "noise": 3,
    "bad_data": 4,
    "gossip": 5,
    "trajectory": 6,
    "sampler": 7,
    "grid": 8,
}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown RNG purpose {purpose!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(PURPOSES[purpose], *map(int, keys)))
    return np.random.default_rng(ss)
