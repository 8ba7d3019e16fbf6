"""Seed derivation for reproducible, order-independent random substreams.

Every random draw in the harness comes from a numpy ``Philox`` generator
(counter based, platform independent) whose key is derived from a master
seed and one or more labels (design id, replicate number, ...).  Keys are
produced by FNV-1a hashing of string labels followed by SplitMix64 mixing,
so the stream for one design never depends on which other designs exist or
on the order in which they are processed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = 0x9E3779B97F4A7C15


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64(state: int) -> int:
    """One SplitMix64 output for the given 64-bit state (state is pre-incremented)."""
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def substream_seed(master_seed: int, *labels: int | str) -> int:
    """Mix ``master_seed`` with each label in turn into a 64-bit key.

    For a single design id this is ``splitmix64(master_seed ^ fnv1a64(id))``.
    """
    state = int(master_seed) & MASK64
    if not labels:
        return splitmix64(state)
    for label in labels:
        key = fnv1a64(label) if isinstance(label, str) else int(label) & MASK64
        state = splitmix64(state ^ key)
    return state


def generator(master_seed: int, *labels: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=substream_seed(master_seed, *labels)))
