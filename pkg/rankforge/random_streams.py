"""
Counter-based random streams

A stream depends only on its integer key tuple, so results never depend on
the order in which parallel work is scheduled.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed_sequence(*keys: int) -> np.random.SeedSequence:
    """SeedSequence for a key tuple; negative keys are folded into 64 bits."""
    return np.random.SeedSequence([int(k) & MASK64 for k in keys])


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a key tuple."""
    return np.random.default_rng(derive_seed_sequence(*keys))


def derive_seed(*keys: int) -> int:
    """Derive a 63-bit integer seed from a key tuple."""
    state = derive_seed_sequence(*keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Stream of bootstrap replicate `index` for a test seeded with `seed`."""
    return derive_rng(seed, index)
