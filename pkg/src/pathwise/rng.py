"""Seed splitting.

Every random stream in the package is derived from a master seed, a purpose
tag and an integer index, so results never depend on call order or on how work
is scheduled across threads.
"""

from __future__ import annotations

import zlib

import numpy as np


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(seed: int, tag: str, *index: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_code(tag), *map(int, index)))


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, tag, *index)``.

    The bit generator is Philox, a counter-based generator, seeded through
    ``SeedSequence`` with the tag hash and indices as the spawn key.
    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, tag, *index)))
