"""Deterministic derivation of independent RNG seeds."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of non-negative integers.

    Distinct part tuples (e.g. experiment seed, round, client index) yield
    statistically independent streams, independent of execution order.
    """
    if any(p < 0 for p in parts):
        raise ValueError("seed parts must be non-negative")
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])
