"""Named random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def rng_for(seed: int, tag: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, *extra)``; stable across runs and platforms."""
    return np.random.default_rng([int(seed), tag_id(tag), *map(int, extra)])
