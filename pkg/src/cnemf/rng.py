"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(root seed, purpose string)`` and whose counter encodes a batch
index. Two streams with different purposes or batch indices never overlap, and
a stream can be replayed without touching any other.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_id(purpose: str) -> int:
    """Stable 64-bit id of a purpose string (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, purpose: str, batch: int = 0) -> np.random.Generator:
    """Generator for ``purpose`` under ``seed``; ``batch`` selects a disjoint block."""
    if seed < 0 or batch < 0:
        raise ValueError("seed and batch must be non-negative")
    key = np.array([seed & _MASK64, purpose_id(purpose)], dtype=np.uint64)
    # high counter word holds the batch, low words advance while drawing
    counter = np.array([0, 0, 0, batch & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def inverse_cdf(probs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Sample indices from probability vectors by inverting the CDF at ``z``.

    ``probs`` has shape ``(..., n)`` and broadcasts against ``z``. The result is
    the smallest index whose cumulative probability exceeds ``z``.
    """
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    z = np.asarray(z, dtype=float)
    idx = (cdf <= z[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
