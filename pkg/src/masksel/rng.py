"""Seed derivation.

Every random stream is a Philox (counter-based) generator keyed by a hash of
the global seed and a tuple of labels, so a stream depends only on what it is
for and never on how many draws happened elsewhere.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *labels) -> int:
    text = repr((int(seed),) + tuple(str(label) for label in labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=16).digest(), "little")


def derive_seed(seed: int, *labels) -> int:
    """A 63-bit integer seed for a named sub-stream."""
    return derive_key(seed, *labels) & ((1 << 63) - 1)


def generator(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))
