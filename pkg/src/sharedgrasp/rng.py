"""Named deterministic random substreams.

Every randomized stage draws from its own substream derived from the global
seed and a stream name, so stages can be re-run independently without
perturbing each other's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(seed: int, name: str) -> int:
    """Derive a 64-bit seed for the named substream of a global seed."""
    digest = hashlib.sha256(f"sharedgrasp:{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream. Stable across platforms."""
    return np.random.default_rng(substream_seed(seed, name))
