"""Seeded random streams.

Every random decision in a run draws from a generator derived from the run
seed plus a path of labels (step, phase, attempt, ...). Streams are
independent of call order, which is what lets trials fan out over threads
and still replay bit-identically.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *labels) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(l) for l in labels))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
