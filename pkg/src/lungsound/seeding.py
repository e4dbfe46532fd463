"""Deterministic RNG streams derived from (seed, purpose tags)."""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["rng_for"]


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Independent generator for a (seed, tags...) stream.

    Stable across processes and runs; distinct tags give statistically
    independent streams from the same base seed.
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
