"""Deterministic random-stream derivation.

All randomness in the package flows from one master seed. Named substreams
are derived by hashing string/int keys into SeedSequence spawn keys, so a
stream's draws depend only on (master_seed, keys) and never on global state
or on the order in which other streams are created. Keying per-gene streams
by gene *name* makes every sampler invariant to input row order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key: str | int) -> tuple[int, ...]:
    if isinstance(key, (int, np.integer)):
        return (int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF)
    digest = hashlib.blake2s(str(key).encode("utf-8"), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )


def derive_rng(master_seed: int, *keys: str | int) -> np.random.Generator:
    """A Generator for the substream named by ``keys``."""
    words: list[int] = []
    for key in keys:
        words.extend(_key_words(key))
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(words))
    return np.random.Generator(np.random.PCG64(ss))


def derive_kernel_seed(master_seed: int, *keys: str | int) -> int:
    """A 32-bit seed for compiled kernels that carry their own RNG."""
    return int(derive_rng(master_seed, *keys).integers(0, 2**32 - 1))


def labels_digest(labels) -> int:
    """Stable 64-bit fingerprint of a label vector (for cache keys and seeds)."""
    arr = np.asarray(labels, dtype=np.int64)
    digest = hashlib.blake2s(arr.tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
