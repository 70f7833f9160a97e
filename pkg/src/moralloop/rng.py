"""Deterministic random streams.

All randomness in the package flows through counter-based Philox generators
whose 128-bit keys are derived by hashing a user seed together with string
labels. Two streams with different labels are statistically independent, and
a stream is fully reproducible from (seed, labels) alone, which is what makes
sharded generation and per-replicate seeding deterministic.
"""

import hashlib

import numpy as np

ALGORITHM = "philox4x64"


def derive_key(seed: int, *labels) -> int:
    """128-bit Philox key from a seed and a label path, via SHA-256."""
    material = "|".join([str(int(seed))] + [str(lab) for lab in labels])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the stream named by (seed, *labels)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))
