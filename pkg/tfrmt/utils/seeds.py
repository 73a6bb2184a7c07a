"""Seed derivation for reproducible, order-independent random streams."""

from __future__ import annotations

import numpy as np

# Stream tags keep PE realizations and matrix draws from sharing seeds.
PE_STREAM = 1
RMT_STREAM = 2


def derive_seed(master: int, *key: int) -> int:
    """Mix a master seed and an integer key path into a 64-bit seed."""
    sequence = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator whose stream depends only on (seed, key)."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))
