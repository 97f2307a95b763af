"""Deterministic random stream derivation.

Every stochastic step in the package draws from a generator keyed by an
integer path (root_seed, index, ...).  Equal paths give bit-identical
streams, so results never depend on evaluation order, batching, or how
the work is fanned out.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(*path: int) -> np.random.Generator:
    """Return a fresh generator keyed by an integer path."""
    return np.random.default_rng(np.random.SeedSequence([p & _MASK64 for p in path]))


def derive_seed(*path: int) -> int:
    """Collapse an integer path into a single non-negative 63-bit seed."""
    ss = np.random.SeedSequence([p & _MASK64 for p in path])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
