"""Seed derivation for independent, reproducible random streams.

Every stochastic stage (AP placement, shadowing noise, IMU noise, weight
init, ...) gets its own generator derived from the master seed plus a string
tag, so adding a consumer never shifts the draws of another.
"""

import hashlib

import numpy as np


def _entropy_word(tag) -> int:
    """Map a seed component (int or str) to a stable 64-bit word."""
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(master_seed: int, *tags) -> np.random.Generator:
    """Generator tied to (master_seed, *tags).  Same inputs, same draws."""
    entropy = [_entropy_word(master_seed)] + [_entropy_word(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_seed(master_seed: int, *tags) -> int:
    """Single integer seed derived the same way as :func:`stream`."""
    entropy = [_entropy_word(master_seed)] + [_entropy_word(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
