"""Stable sub-seed derivation: every random stream is keyed by (seed, purpose)."""
import hashlib

import numpy as np


def derive_seed(seed, purpose):
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed, purpose):
    return np.random.default_rng(derive_seed(seed, purpose))
