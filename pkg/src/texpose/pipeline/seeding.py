"""Counter-based seed splitting: one master seed fans out to independent,
label-addressed streams, so pipeline stages (and grid runs sharing stages)
draw identical randomness regardless of execution order."""

from __future__ import annotations

import hashlib

import numpy as np


def stream(master_seed: int, *labels: str) -> np.random.Generator:
    """Independent Philox stream keyed by (master seed, label path)."""
    digest = hashlib.sha256("/".join(labels).encode()).digest()
    label_key = int.from_bytes(digest[:8], "little")
    bits = np.random.Philox(key=[master_seed & (2**64 - 1), label_key])
    return np.random.Generator(bits)
