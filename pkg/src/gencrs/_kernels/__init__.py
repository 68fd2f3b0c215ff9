"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

Two operations live here because they are the only loop-bound inner kernels
in the pipeline (everything else is BLAS-backed matrix work):

- ``trigram_counts``: signed hashed character-3-gram counts for the toy
  embedder,
- ``nearest_codes``: per-row nearest-codeword search (squared euclidean,
  lowest-index tie-break) used by quantization and k-means.

The Cython module is preferred when it was built; set ``GENCRS_PURE_PYTHON=1``
to force the fallback. Both backends use the same integer hash arithmetic and
the same tie-break rule; integer outputs agree exactly, float argmin results
may differ only on rounding-level distance ties.
"""

from __future__ import annotations

import os

from . import _purepy

_ext = None
if not os.environ.get("GENCRS_PURE_PYTHON"):
    try:
        from . import _fastk as _ext
    except ImportError:
        _ext = None

_impl = _ext if _ext is not None else _purepy

BACKEND = "cython" if _ext is not None else "python"

trigram_counts = _impl.trigram_counts
nearest_codes = _impl.nearest_codes


def available_backends():
    """Name -> module for every importable backend (for tests/benchmarks)."""
    backends = {"python": _purepy}
    if _ext is not None:
        backends["cython"] = _ext
    return backends
