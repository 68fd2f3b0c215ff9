import json
import struct

import numpy as np
import pytest

from gencrs import catalog as cat
from gencrs.catalog import (
    Catalog,
    CatalogError,
    EmbeddingMatrix,
    ItemRecord,
    embed_catalog,
    load_catalog,
    load_embeddings,
    save_embeddings,
    serialize_metadata,
    toy_embed,
)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


RECORDS = [
    {"item_id": "m1", "title": "The Matrix", "year": 1999,
     "genres": ["Action", "Sci-Fi"], "keywords": ["simulation"],
     "plot": "A hacker learns the truth."},
    {"item_id": "m2", "title": "Heat", "year": 1995,
     "genres": ["Crime"], "keywords": [], "plot": "Cops and robbers."},
    {"item_id": "m3", "title": "Alien", "year": None,
     "genres": [], "keywords": ["space"], "plot": ""},
]


class TestLoadCatalog:
    def test_preserves_order_and_index(self, tmp_path):
        p = tmp_path / "catalog.jsonl"
        write_jsonl(p, RECORDS)
        c = load_catalog(p)
        assert len(c) == 3
        assert [it.item_id for it in c.items] == ["m1", "m2", "m3"]
        assert c.index == {"m1": 0, "m2": 1, "m3": 2}
        assert c.get("m2").title == "Heat"

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "catalog.jsonl"
        write_jsonl(p, RECORDS + [RECORDS[0]])
        with pytest.raises(CatalogError, match="m1"):
            load_catalog(p)

    def test_missing_field_rejected(self, tmp_path):
        p = tmp_path / "catalog.jsonl"
        bad = dict(RECORDS[0])
        del bad["title"]
        write_jsonl(p, [bad])
        with pytest.raises(CatalogError, match="title"):
            load_catalog(p)

    def test_parse_error_names_line(self, tmp_path):
        p = tmp_path / "catalog.jsonl"
        p.write_text('{"item_id": "m1"\n', encoding="utf-8")
        with pytest.raises(CatalogError, match=":1:"):
            load_catalog(p)

    def test_search_titles(self, tmp_path):
        p = tmp_path / "catalog.jsonl"
        write_jsonl(p, RECORDS)
        c = load_catalog(p)
        assert [it.item_id for it in c.search_titles("heat")] == ["m2"]
        assert [it.item_id for it in c.search_titles("E")] == ["m1", "m2", "m3"]
        assert c.search_titles("E", limit=2)[-1].item_id == "m2"


class TestSerializeMetadata:
    def test_full_record(self):
        item = ItemRecord(item_id="x", title="T", year=2010,
                          genres=("A", "B"), keywords=("k",), plot="P")
        assert serialize_metadata(item) == (
            "title: T | year: 2010 | genres: A, B | keywords: k | plot: P"
        )

    def test_empty_fields(self):
        item = ItemRecord(item_id="x", title="T")
        assert serialize_metadata(item) == (
            "title: T | year:  | genres:  | keywords:  | plot: "
        )

    def test_differs_only_after_plot(self):
        a = ItemRecord(item_id="x", title="T", year=1, plot="aaa")
        b = ItemRecord(item_id="x", title="T", year=1, plot="bbb")
        sa, sb = serialize_metadata(a), serialize_metadata(b)
        head = sa[: sa.index("plot: ") + len("plot: ")]
        assert sb.startswith(head)
        assert sa != sb


def fnv_bucket_oracle(text, dim, seed):
    """Independent scalar recomputation of the signed 3-gram buckets."""
    offset = 0xCBF29CE484222325
    prime = 0x100000001B3
    mask = (1 << 64) - 1
    h0 = offset
    for b in seed.to_bytes(8, "little", signed=False):
        h0 = ((h0 ^ b) * prime) & mask
    lowered = text.lower()
    buckets = {}
    for i in range(len(lowered) - 2):
        h = h0
        for ch in lowered[i : i + 3]:
            for b in ord(ch).to_bytes(4, "little"):
                h = ((h ^ b) * prime) & mask
        sign = -1 if (h >> 63) & 1 else 1
        buckets[h % dim] = buckets.get(h % dim, 0) + sign
    return buckets


class TestToyEmbed:
    def test_deterministic(self):
        a = toy_embed("A Space Odyssey", 64, 17)
        b = toy_embed("A Space Odyssey", 64, 17)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        v = toy_embed("some descriptive text about a film", 32, 3)
        assert np.linalg.norm(v.astype(np.float64)) == pytest.approx(1.0, abs=1e-6)

    def test_short_text_is_zero(self):
        assert np.array_equal(toy_embed("ab", 16, 0), np.zeros(16, np.float32))

    def test_dim_floor(self):
        with pytest.raises(ValueError, match=">= 8"):
            toy_embed("abcdef", 7, 0)

    def test_buckets_match_independent_oracle(self):
        text = "title: Heat | year: 1995"
        dim, seed = 16, 17
        expected = fnv_bucket_oracle(text, dim, seed)
        cps = np.frombuffer(text.lower().encode("utf-32-le"), dtype=np.uint32)
        from gencrs._kernels import trigram_counts

        counts = trigram_counts(cps, dim, seed)
        dense = np.zeros(dim, np.int64)
        for k, v in expected.items():
            dense[k] = v
        assert np.array_equal(counts, dense)

    def test_disjoint_trigrams_disjoint_buckets(self):
        t1, t2 = "aaaaaa", "bbbbbb"
        dim, seed = 64, 17
        b1 = set(fnv_bucket_oracle(t1, dim, seed))
        b2 = set(fnv_bucket_oracle(t2, dim, seed))
        assert not (b1 & b2), "hash collision at this dim/seed; pick another case"
        v1 = toy_embed(t1, dim, seed)
        v2 = toy_embed(t2, dim, seed)
        assert set(np.flatnonzero(v1)) == b1
        assert set(np.flatnonzero(v2)) == b2

    def test_case_insensitive(self):
        assert np.array_equal(toy_embed("The Film", 32, 1),
                              toy_embed("the film", 32, 1))


class TestEmb1Format:
    def test_byte_layout(self, tmp_path):
        rows = np.arange(6, dtype=np.float32).reshape(2, 3)
        p = tmp_path / "e.emb1"
        save_embeddings(p, EmbeddingMatrix(rows=rows))
        raw = p.read_bytes()
        assert raw[:4] == b"EMB1"
        count, dim = struct.unpack("<II", raw[4:12])
        assert (count, dim) == (2, 3)
        assert raw[12:] == rows.astype("<f4").tobytes()

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(7, 8)).astype(np.float32)
        p = tmp_path / "e.emb1"
        save_embeddings(p, EmbeddingMatrix(rows=rows))
        back = load_embeddings(p)
        assert np.array_equal(back.rows, rows)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "e.emb1"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CatalogError, match="magic"):
            load_embeddings(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "e.emb1"
        p.write_bytes(b"EMB1" + struct.pack("<II", 2, 4) + b"\x00" * 8)
        with pytest.raises(CatalogError, match="truncated"):
            load_embeddings(p)

    def test_count_mismatch_with_catalog(self, tmp_path):
        c = Catalog.from_items(
            [ItemRecord(item_id=f"m{i}", title=f"T{i}") for i in range(3)]
        )
        p = tmp_path / "e.emb1"
        save_embeddings(p, EmbeddingMatrix(rows=np.zeros((2, 8), np.float32)))
        with pytest.raises(CatalogError, match="catalog size"):
            load_embeddings(p, catalog=c)

    def test_nonfinite_rejected(self, tmp_path):
        rows = np.zeros((2, 8), np.float32)
        rows[1, 3] = np.nan
        p = tmp_path / "e.emb1"
        save_embeddings(p, EmbeddingMatrix(rows=rows))
        with pytest.raises(CatalogError, match="row 1"):
            load_embeddings(p)


def test_embed_catalog_rows_align_with_items(tmp_path):
    p = tmp_path / "catalog.jsonl"
    write_jsonl(p, RECORDS)
    c = load_catalog(p)
    m = embed_catalog(c, dim=64, seed=17)
    assert m.count == len(c) and m.dim == 64
    for i, item in enumerate(c.items):
        expected = toy_embed(serialize_metadata(item), 64, 17)
        assert np.array_equal(m.rows[i], expected)
