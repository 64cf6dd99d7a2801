"""Deterministic RNG streams derived from the single run seed.

Every random decision in the pipeline draws from a stream keyed by
(seed, stable hash of component name, *indices).  Streams are stateless to
reconstruct, so resuming at step k needs no serialized generator state and
parallel workers get schedule-independent draws.
"""

import hashlib

import numpy as np


def _name_tag(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(seed, name, *indices) -> np.random.Generator:
    entropy = (int(seed), _name_tag(name)) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))
