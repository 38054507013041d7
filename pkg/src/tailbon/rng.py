"""Counter-based random streams.

A stream is addressed by ``(seed, *ids)``; the ids usually encode
(experiment, trial, ...). Two streams with different addresses are
independent, and the draws of one never depend on how many other streams
were consumed before it, so results do not depend on execution order or on
the number of workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise ValueError("stream ids must be non-negative")
    return value


def stream(seed: int, *ids) -> np.random.Generator:
    """Return the Philox generator addressed by ``seed`` and ``ids``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_as_key(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))


def lineage(seed: int, *ids) -> str:
    """Human-readable record of a stream address, stored with reward batches."""
    return "/".join([str(int(seed)), *(str(i) for i in ids)])
