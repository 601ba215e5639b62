"""Deterministic fan-out of one master seed into named sub-streams.

Each consumer (parameter init, dropout masks, epoch shuffling, ...) owns a
fixed stream index, so toggling one feature never perturbs the randomness
seen by another.  Epoch-dependent streams append the epoch as a second
spawn key.
"""

from __future__ import annotations

import numpy as np

# Stream indices are part of the reproducibility contract; never reorder.
STREAMS = {
    "init": 0,
    "dropout": 1,
    "shuffle": 2,
    "bench": 3,
    "analysis": 4,
    "gradcheck": 5,
}


def sub_seed(master_seed: int, stream: str, index: int = 0) -> np.random.SeedSequence:
    if stream not in STREAMS:
        raise KeyError(f"unknown seed stream: {stream!r}")
    return np.random.SeedSequence(master_seed, spawn_key=(STREAMS[stream], index))


def sub_rng(master_seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Generator for a named sub-stream of the master seed."""
    return np.random.default_rng(sub_seed(master_seed, stream, index))
