"""Seeded, counter-based random streams split by fixed labels."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *labels)``.

    Labels may be strings or non-negative integers; the same tuple always
    yields the same stream.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in labels))
    return np.random.Generator(np.random.Philox(ss))


def torch_seed(seed: int, *labels) -> int:
    return int(substream(seed, *labels).integers(0, 2**63 - 1))
