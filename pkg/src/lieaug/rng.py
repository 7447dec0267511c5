"""Seeded, splittable random streams.

Every stream is a Philox counter-based generator keyed by the run seed plus
a path of labels, so sub-streams (per trajectory, per epoch, per batch) are
reproducible regardless of the order in which they are created.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_label_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
