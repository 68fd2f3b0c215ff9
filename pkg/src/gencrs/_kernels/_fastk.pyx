"""Compiled kernels: hashed 3-gram counting and nearest-codeword search."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static const uint64_t FNV_OFFSET_C = 0xCBF29CE484222325ULL;
    static const uint64_t FNV_PRIME_C = 0x100000001B3ULL;
    """
    cnp.uint64_t FNV_OFFSET_C
    cnp.uint64_t FNV_PRIME_C


def trigram_counts(codepoints, int dim, seed):
    """Signed hashed counts of sliding 3-grams over a codepoint sequence.

    Matches the pure backend bit for bit: FNV-1a over 8 seed bytes then the
    12 little-endian bytes of each 3-gram; bucket = hash % dim, sign from the
    hash's top bit.
    """
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] cps = np.ascontiguousarray(
        codepoints, dtype=np.uint64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(dim, dtype=np.int64)
    cdef Py_ssize_t n = cps.shape[0]
    if n < 3:
        return counts

    cdef cnp.uint64_t h0 = FNV_OFFSET_C
    cdef cnp.uint64_t s = <cnp.uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef int k
    for k in range(8):
        h0 = (h0 ^ ((s >> (8 * k)) & 0xFF)) * FNV_PRIME_C

    cdef cnp.uint64_t h, cp
    cdef cnp.uint64_t udim = <cnp.uint64_t> dim
    cdef Py_ssize_t i
    cdef int j
    for i in range(n - 2):
        h = h0
        for j in range(3):
            cp = cps[i + j]
            for k in range(4):
                h = (h ^ ((cp >> (8 * k)) & 0xFF)) * FNV_PRIME_C
        if (h >> 63) == 0:
            counts[<Py_ssize_t> (h % udim)] += 1
        else:
            counts[<Py_ssize_t> (h % udim)] -= 1
    return counts


def nearest_codes(x, codebook):
    """Index of the squared-euclidean-nearest codebook row for each row of x.

    Ties break to the lowest index (strict < keeps the first minimum).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xs = np.ascontiguousarray(
        x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cb = np.ascontiguousarray(
        codebook, dtype=np.float64)
    cdef Py_ssize_t b = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    cdef Py_ssize_t kk = cb.shape[0]
    if cb.shape[1] != d:
        raise ValueError("dimension mismatch between rows and codebook")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] codes = np.empty(b, dtype=np.int64)
    cdef Py_ssize_t i, j, t
    cdef double best, dist, diff
    cdef Py_ssize_t best_j
    for i in range(b):
        best = 0.0
        best_j = 0
        for j in range(kk):
            dist = 0.0
            for t in range(d):
                diff = xs[i, t] - cb[j, t]
                dist += diff * diff
            if j == 0 or dist < best:
                best = dist
                best_j = j
        codes[i] = best_j
    return codes
