"""Numpy reference implementations of the kernel contracts."""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fold_seed(seed: int) -> int:
    """FNV-1a fold of the 8 little-endian seed bytes into the offset basis."""
    h = FNV_OFFSET
    for byte in int(seed).to_bytes(8, "little", signed=False):
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def trigram_counts(codepoints: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Signed hashed counts of sliding 3-grams over a codepoint sequence.

    Each 3-gram is FNV-1a-hashed (seed bytes first, then the 12 little-endian
    bytes of the three uint32 codepoints); the hash picks a bucket in
    ``[0, dim)`` and a sign from its top bit. Sequences shorter than 3 yield
    the zero vector.
    """
    cps = np.ascontiguousarray(codepoints, dtype=np.uint64)
    n = cps.shape[0]
    counts = np.zeros(dim, dtype=np.int64)
    if n < 3:
        return counts
    h = np.full(n - 2, _fold_seed(seed), dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    byte_mask = np.uint64(0xFF)
    for j in range(3):
        window = cps[j : n - 2 + j]
        for k in range(4):
            b = (window >> np.uint64(8 * k)) & byte_mask
            h = (h ^ b) * prime
    buckets = (h % np.uint64(dim)).astype(np.int64)
    signs = np.where((h >> np.uint64(63)) == 0, 1.0, -1.0)
    return np.bincount(buckets, weights=signs, minlength=dim).astype(np.int64)


def nearest_codes(x: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the squared-euclidean-nearest codebook row for each row of x.

    Ties break to the lowest index (argmin keeps the first minimum).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    x_sq = np.sum(x * x, axis=1, keepdims=True)
    c_sq = np.sum(codebook * codebook, axis=1)
    dists = x_sq - 2.0 * (x @ codebook.T) + c_sq[None, :]
    return np.argmin(dists, axis=1).astype(np.int64)
