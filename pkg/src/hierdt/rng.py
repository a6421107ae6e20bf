"""Counter-based random streams.

Every random draw in the workbench comes from a Philox stream keyed by a
tuple of integers ``(seed, *ids)``.  Two calls with the same key always see
the same numbers, regardless of call order or how work is spread across
threads, which is what makes per-client / per-sample parallelism safe.
"""
from __future__ import annotations

import zlib

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key type: {type(key).__name__}")


def stream(seed: int, *ids) -> np.random.Generator:
    """Return an independent generator for the key ``(seed, *ids)``."""
    entropy = [_as_int(seed)] + [_as_int(i) for i in ids]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *ids) -> int:
    """Derive a child integer seed (used to hand seeds to sub-engines)."""
    entropy = [_as_int(seed)] + [_as_int(i) for i in ids]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)
