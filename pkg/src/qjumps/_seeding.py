"""Per-unit seed derivation for order-independent parallel runs."""

import numpy as np


def derive_seed(base_seed: int, index: int) -> int:
    """64-bit seed for unit ``index``: the first word of
    ``numpy.random.SeedSequence([base_seed, index])``."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))
