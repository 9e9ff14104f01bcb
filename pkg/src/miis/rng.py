"""Deterministic hierarchical random streams.

Every source of randomness in this package is addressed by a path: a base
seed followed by labels such as ("chain", method, replication, "step", t, s).
The path is hashed into seed material for an independent generator, so any
piece of a run can be reproduced in isolation and results do not depend on
scheduling or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "spawn_key", "derive_seed"]


def spawn_key(seed: int, *path) -> list[int]:
    """Hash a base seed and a path of labels into seed material.

    Parameters
    ----------
    seed : int
        Base seed of the run or chain.
    *path
        Integers or strings identifying the consumer (method label,
        replication index, iteration, block, ...).

    Returns
    -------
    list of int
        Eight 32-bit words suitable for ``numpy.random.SeedSequence``.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in path:
        h.update(b"\x1f")
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + str(int(part)).encode())
        elif isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            raise TypeError(f"stream path parts must be int or str, got {type(part).__name__}")
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]


def substream(seed: int, *path) -> np.random.Generator:
    """Return the generator addressed by ``(seed, *path)``.

    Identical arguments always produce an identical generator, on every
    platform and regardless of how many other streams were created before.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(spawn_key(seed, *path))))


def derive_seed(seed: int, *path) -> int:
    """Fold a stream path into a plain integer seed for a nested run.

    Used to hand each chain of a replicated experiment its own base
    seed; the chain then opens per-iteration substreams under it.
    """
    words = spawn_key(seed, *path)
    return (words[0] << 32) | words[1]
