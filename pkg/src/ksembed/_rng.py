"""Counter-based random streams derived from a single root seed.

Every random object (Gaussian JL matrix, sketch tree, hash, categorical
draws) gets its own Philox stream keyed by a tuple of names and integers, so
results never depend on the order in which streams are consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_word(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        key = int(key)
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return key
    digest = hashlib.blake2b(str(key).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    words = tuple(_key_word(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=words)
    return np.random.Generator(np.random.Philox(seq))


def bulk_stream(seed: int, *keys) -> np.random.Generator:
    """Like :func:`stream` but backed by SFC64, which is faster for large
    single-shot draws such as dense Gaussian compressions."""
    words = tuple(_key_word(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=words)
    return np.random.Generator(np.random.SFC64(seq))


def child_seed(seed: int, *keys) -> int:
    """Derive a 64-bit seed for a sub-object from ``(seed, *keys)``."""
    words = tuple(_key_word(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=words)
    return int(seq.generate_state(1, dtype=np.uint64)[0])
