"""Named seed derivation: every random stream is (master seed, component, id)."""

import hashlib

import numpy as np


def derive_seed(master: int, *names) -> np.random.SeedSequence:
    words = [int(master) & 0xFFFFFFFF, (int(master) >> 32) & 0xFFFFFFFF]
    for name in names:
        digest = hashlib.sha256(str(name).encode()).digest()
        words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.SeedSequence(words)


def rng_for(master: int, *names) -> np.random.Generator:
    """PCG64 generator for the named stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *names)))
