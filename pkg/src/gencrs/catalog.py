"""Item catalog: metadata records, textual serialization, and embeddings.

The catalog file is line-delimited JSON (one item per line). Embeddings are
either produced by the deterministic hashed-3-gram toy embedder or imported
from an EMB1 binary file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import trigram_counts


class CatalogError(ValueError):
    """Malformed catalog or embedding input."""


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    year: Optional[int] = None
    genres: tuple = ()
    keywords: tuple = ()
    plot: str = ""

    def __post_init__(self):
        if not self.item_id:
            raise CatalogError("item_id must be non-empty")
        if not self.title:
            raise CatalogError(f"item {self.item_id!r}: title must be non-empty")
        object.__setattr__(self, "genres", tuple(self.genres))
        object.__setattr__(self, "keywords", tuple(self.keywords))


@dataclass(frozen=True)
class Catalog:
    items: tuple
    index: dict = field(compare=False)

    @classmethod
    def from_items(cls, items) -> "Catalog":
        items = tuple(items)
        index = {}
        for pos, item in enumerate(items):
            if item.item_id in index:
                raise CatalogError(f"duplicate item_id {item.item_id!r}")
            index[item.item_id] = pos
        return cls(items=items, index=index)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.index

    def get(self, item_id: str) -> ItemRecord:
        return self.items[self.index[item_id]]

    def search_titles(self, query: str, limit: int = 20):
        """Case-insensitive title-substring search, catalog order."""
        q = query.lower()
        hits = [it for it in self.items if q in it.title.lower()]
        return hits[:limit]


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: np.ndarray  # (count, dim) float32

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


_REQUIRED_FIELDS = ("item_id", "title", "genres", "keywords", "plot")


def load_catalog(path) -> Catalog:
    """Parse a line-delimited JSON catalog file, preserving file order."""
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path}:{lineno}: invalid record: {exc}") from exc
            for name in _REQUIRED_FIELDS:
                if name not in rec:
                    raise CatalogError(f"{path}:{lineno}: missing field {name!r}")
            if rec["item_id"] in seen:
                raise CatalogError(
                    f"{path}:{lineno}: duplicate item_id {rec['item_id']!r}"
                )
            seen.add(rec["item_id"])
            year = rec.get("year")
            if year is not None:
                year = int(year)
            try:
                items.append(
                    ItemRecord(
                        item_id=rec["item_id"],
                        title=rec["title"],
                        year=year,
                        genres=rec["genres"],
                        keywords=rec["keywords"],
                        plot=rec["plot"],
                    )
                )
            except CatalogError as exc:
                raise CatalogError(f"{path}:{lineno}: {exc}") from exc
    return Catalog.from_items(items)


def serialize_metadata(item: ItemRecord) -> str:
    """Render an item as the fixed five-field textual description.

    List fields join with ", "; an absent year renders as the empty string so
    the template never changes shape.
    """
    year = "" if item.year is None else str(item.year)
    return (
        f"title: {item.title} | year: {year}"
        f" | genres: {', '.join(item.genres)}"
        f" | keywords: {', '.join(item.keywords)}"
        f" | plot: {item.plot}"
    )


def toy_embed(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic embedding: hashed signed char-3-gram counts, L2-normalized.

    Stands in for a pretrained text encoder. Pure function of
    (text, dim, seed); texts shorter than 3 characters map to the zero vector.
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    lowered = text.lower()
    cps = np.frombuffer(lowered.encode("utf-32-le"), dtype=np.uint32)
    counts = trigram_counts(cps, dim, seed)
    vec = counts.astype(np.float32)
    norm = np.linalg.norm(vec.astype(np.float64))
    if norm > 0.0:
        vec = (vec.astype(np.float64) / norm).astype(np.float32)
    return vec


def embed_catalog(catalog: Catalog, dim: int, seed: int) -> EmbeddingMatrix:
    rows = np.stack(
        [toy_embed(serialize_metadata(item), dim, seed) for item in catalog.items]
    )
    return EmbeddingMatrix(rows=rows.astype(np.float32))


_EMB1_MAGIC = b"EMB1"


def save_embeddings(path, matrix: EmbeddingMatrix) -> None:
    """Write the EMB1 binary format: magic, u32 count, u32 dim, f32 rows (LE)."""
    rows = np.ascontiguousarray(matrix.rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_EMB1_MAGIC)
        fh.write(struct.pack("<II", matrix.count, matrix.dim))
        fh.write(rows.tobytes())


def load_embeddings(path, catalog: Optional[Catalog] = None) -> EmbeddingMatrix:
    """Read an EMB1 file, checking the count against the catalog and finiteness."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _EMB1_MAGIC:
            raise CatalogError(f"{path}: bad magic {magic!r}, expected {_EMB1_MAGIC!r}")
        count, dim = struct.unpack("<II", fh.read(8))
        payload = fh.read()
    expected = count * dim * 4
    if len(payload) != expected:
        raise CatalogError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    if catalog is not None and count != len(catalog):
        raise CatalogError(
            f"{path}: count {count} does not match catalog size {len(catalog)}"
        )
    finite = np.isfinite(rows).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise CatalogError(f"{path}: non-finite value in row {bad}")
    return EmbeddingMatrix(rows=rows)
