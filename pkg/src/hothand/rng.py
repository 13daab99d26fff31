"""Deterministic random streams keyed by (seed, labels...).

Every simulated quantity draws from a generator derived only from the master
seed and a tuple of labels, so results never depend on scheduling order or on
how many other streams were consumed first.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    entropy = [_label_to_int(master_seed)] + [_label_to_int(x) for x in labels]
    return np.random.SeedSequence(entropy)


def stream(master_seed: int, *labels) -> np.random.Generator:
    """Return a PCG64 generator for ``(master_seed, *labels)``.

    String labels are hashed with BLAKE2b, so the mapping is stable across
    processes and Python versions (unlike ``hash()``).
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *labels)))
