"""Seeded random streams.

Every stream is a numpy ``Generator`` driven by the Philox4x64 counter-based
bit generator. A stream is identified by a root seed plus a tuple of keys;
string keys are mapped to integers with CRC-32 so that the same names always
select the same stream.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
