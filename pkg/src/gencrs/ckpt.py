"""Deterministic binary checkpoint container.

A checkpoint is a JSON header (kind, config, extra, array manifest) followed
by raw little-endian C-order array bytes in manifest order. Writing the same
state twice produces byte-identical files: keys are sorted, no timestamps,
no compression.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"GCRSCKPT1\n"


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def save_checkpoint(path, kind: str, arrays: dict, config: dict = None,
                    extra: dict = None) -> None:
    """Write arrays plus JSON-serializable metadata to a single file.

    Array insertion order is preserved in the manifest and payload.
    """
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<")
        blob = np.ascontiguousarray(arr, dtype=le).tobytes()
        manifest.append({"name": name, "dtype": le.str, "shape": list(arr.shape)})
        blobs.append(blob)
    header = {
        "kind": kind,
        "config": config or {},
        "extra": extra or {},
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=True,
                              separators=(",", ":")).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_kind: str = None):
    """Read a checkpoint; returns (kind, config, extra, arrays dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        kind = header["kind"]
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(
                f"{path}: kind {kind!r}, expected {expect_kind!r}"
            )
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise CheckpointError(
                    f"{path}: truncated array {entry['name']!r}"
                )
            arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after arrays")
    return kind, header["config"], header["extra"], arrays
