"""Seed derivation shared by the seeded transforms."""

import numpy as np

SEED_MASK = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a named sub-stream; stable across runs and platforms."""
    state = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(2, np.uint64)
    return int(state[0])


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(check_seed(seed))
