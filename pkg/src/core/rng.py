"""
Seeded RNG helpers.

Every stochastic operation owns its generator. Child seeds are derived
from a parent seed plus integer keys through ``np.random.SeedSequence``,
so a (permutation, fold) cell or a single MC-dropout input can be
reproduced in isolation, independent of worker scheduling.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Construct a PCG64-based Generator for ``seed``."""
    return np.random.default_rng(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *keys: int) -> int:
    """
    Stable 63-bit child seed for ``(seed, *keys)``.

    Args:
        seed: Parent (master) seed
        *keys: Integer path, e.g. (permutation, fold)

    Returns:
        Non-negative integer seed
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & ((1 << 63) - 1)
