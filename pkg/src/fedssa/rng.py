"""Deterministic random streams derived from a master seed.

All randomness in the simulator flows through `stream`, which hashes a
(seed, *path) tuple into a Philox key. Philox is counter-based, so streams
are independent of each other and of draw order elsewhere in the program:
two streams with different paths never share state, and re-deriving the
same path always yields the same sequence. Stream paths are keyed by
purpose and logical identity (round index, client id, class label), never
by execution order, which is what makes client-permutation invariance and
bit-reproducibility possible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *path: object) -> np.random.Generator:
    """Return an independent Generator for the given seed and path.

    Path elements must have stable reprs (ints and strings in practice).
    """
    token = repr((int(seed),) + tuple(path)).encode("utf-8")
    digest = hashlib.sha256(token).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def spawn_key(seed: int, *path: object) -> int:
    """Return the integer key `stream` would use, for checkpoint metadata."""
    token = repr((int(seed),) + tuple(path)).encode("utf-8")
    digest = hashlib.sha256(token).digest()
    return int.from_bytes(digest[:16], "little")
