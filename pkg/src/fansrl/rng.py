"""Named random substreams derived from a single root seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(root_seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator for the stream ``root_seed/names[0]/names[1]/...``.

    The same path always yields the same stream, and distinct paths yield
    statistically independent streams (SeedSequence spawn keys).
    """
    key = tuple(n if isinstance(n, int) else _key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=key))


def child_seed(root_seed: int, *names: str | int) -> int:
    """An integer seed for APIs that want an int rather than a Generator."""
    return int(substream(root_seed, *names).integers(0, 2**31 - 1))
