"""Stable seed derivation for independent random streams.

Every stochastic component derives its stream from (base seed, purpose tag,
optional indices) so that runs are reproducible and resume does not require
serializing RNG state.
"""

from __future__ import annotations

import hashlib
import random


def seed_key(*parts: object) -> str:
    """Join parts into a stable string key for a derived stream."""
    return ":".join(str(p) for p in parts)


def seed_int(*parts: object) -> int:
    """Derive a 63-bit integer seed from the parts via sha256.

    Stable across processes and platforms, unlike hash().
    """
    digest = hashlib.sha256(seed_key(*parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def stream(*parts: object) -> random.Random:
    """A fresh random.Random seeded from the derived key."""
    return random.Random(seed_int(*parts))
