"""Deterministic seed derivation for independent RNG streams.

Every stochastic component owns a stream keyed by a tuple of integers
(e.g. ``(global_seed, sample_id)`` or ``(seed, sample_id, layer_index)``).
Streams are derived through ``numpy.random.SeedSequence`` so the mapping is
stable across platforms and runs.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Collapse a tuple of integer keys into a single 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent numpy generator for the given key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))
