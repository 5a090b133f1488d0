"""Seeded randomness conventions shared by every module.

All shuffles, samples, and noise draws in this package come from numpy's
PCG64 generator so that results are bit-reproducible across platforms and
runs. Substreams are derived by feeding a tuple of integers (seed plus
context indices) into a SeedSequence, which numpy guarantees to be stable.
Manifests record the tag below so a reader knows which generator produced
an artifact.
"""
from __future__ import annotations

import numpy as np

PRNG_TAG = "numpy-pcg64"

_MASK64 = (1 << 64) - 1


def rng_from(*parts: int) -> np.random.Generator:
    """PCG64 generator keyed by one or more integers.

    Negative integers are folded into the unsigned 64-bit range so any
    Python int is a legal seed component.
    """
    entropy = [int(p) & _MASK64 for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed derived from (seed, index, ...) tuples.

    Used to hand independent substreams to trials and firms without the
    parent stream's state leaking across tasks.
    """
    entropy = [int(p) & _MASK64 for p in parts]
    state = np.random.SeedSequence(entropy).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
