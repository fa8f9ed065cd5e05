"""Deterministic random streams keyed by seed and label path.

Every stochastic operation in the package draws from its own named
substream.  Streams are counter-based (Philox), so results are
bit-reproducible from (seed, path) alone and independent of the order
in which other streams are consumed.
"""

import hashlib

import numpy as np


def _token(part) -> int:
    """Map one path element to a stable 32-bit integer."""
    if isinstance(part, (bool,)):
        raise TypeError("bool path elements are ambiguous; use int or str")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("path integers must be non-negative")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")
    raise TypeError(f"unsupported path element type: {type(part).__name__}")


def stream(seed: int, *path) -> np.random.Generator:
    """Return a Generator for the substream named by ``path`` under ``seed``.

    ``path`` elements may be non-negative ints or strings; strings are
    hashed stably.  The same (seed, path) always yields the same bits.
    """
    spawn_key = tuple(_token(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
