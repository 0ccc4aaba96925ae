"""Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is derived from
``(seed, stream ids)``.  Replicate ``r`` of a stream owns the counter range
starting at ``r * blocks_per_replicate``, so the numbers of a replicate never
depend on how many other replicates are drawn, or in which chunk.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter step


def _zigzag(i: int) -> int:
    return 2 * i if i >= 0 else -2 * i - 1


def stream_key(seed: int, ids: Sequence[int]) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_zigzag(int(i)) for i in ids))
    return ss.generate_state(2, np.uint64)


def standard_normals(seed: int, ids: Sequence[int], per_replicate: int,
                     replicates: int = 1, first_replicate: int = 0) -> np.ndarray:
    """Standard normals of shape ``(replicates, per_replicate)`` from one stream.

    Uniforms are mapped through the inverse normal CDF so that each normal
    consumes exactly one 64-bit word; this keeps counter addressing exact.
    """
    if per_replicate < 0 or replicates < 0:
        raise ValueError("counts must be nonnegative")
    blocks = -(-per_replicate // _WORDS_PER_BLOCK)
    if replicates == 0 or blocks == 0:
        return np.zeros((replicates, per_replicate))
    bitgen = np.random.Philox(key=stream_key(seed, ids),
                              counter=[first_replicate * blocks, 0, 0, 0])
    raw = bitgen.random_raw(replicates * blocks * _WORDS_PER_BLOCK)
    raw = raw.reshape(replicates, blocks * _WORDS_PER_BLOCK)[:, :per_replicate]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def thread_count() -> int:
    """Worker threads for replicate-parallel loops (env ``SPDELAB_THREADS``)."""
    value = os.environ.get("SPDELAB_THREADS")
    if value is None:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1
