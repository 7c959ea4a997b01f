import json

import numpy as np
import pytest

from fsre.ingest import (
    NYT24_GROUPS,
    CacheError,
    CacheWriter,
    EmbeddingCache,
    IngestError,
    SplitSpec,
    build_catalog,
    coarse_type,
    inter_split,
    intra_split,
    mask_triples,
    nyt24_catalog,
    read_instances,
    relation_description,
    scan_cache,
    write_instances,
)
from fsre.synthetic import SynthConfig, make_catalog, make_corpus
from fsre.types import Instance, Triple


def test_relation_description_tokenizes_slash_paths():
    assert relation_description("/people/person/place_of_birth") == (
        "people", "person", "place", "of", "birth",
    )
    assert relation_description("/location/country/capital") == (
        "location", "country", "capital",
    )
    with pytest.raises(IngestError):
        relation_description("///")


def test_nyt24_catalog_layout():
    cat = nyt24_catalog()
    assert len(cat) == 24
    names = NYT24_GROUPS["A"] + NYT24_GROUPS["B"] + NYT24_GROUPS["C"]
    assert cat.names == names
    for rid, name in enumerate(names):
        assert cat.id_of(name) == rid
        assert cat.name_of(rid) == name
        assert 1 <= len(cat.description(rid)) <= 10


def test_coarse_type():
    assert coarse_type("/people/person/religion") == "people"
    assert coarse_type("/business/company/industry") == "business"


def test_inter_split_partitions_by_group():
    cat = nyt24_catalog()
    split = inter_split(cat, "B")
    assert split.name == "inter-b"
    assert split.test_relations == tuple(range(8, 16))
    assert split.train_relations == tuple(range(0, 8)) + tuple(range(16, 24))
    with pytest.raises(IngestError):
        inter_split(cat, "D")


def test_intra_split_partitions_by_coarse_type():
    cat = nyt24_catalog()
    split = intra_split(cat, "people")
    assert split.name == "intra-people"
    assert len(split.test_relations) == 10
    assert all(coarse_type(cat.name_of(r)) == "people" for r in split.test_relations)
    assert all(coarse_type(cat.name_of(r)) != "people" for r in split.train_relations)
    assert len(split.train_relations) + len(split.test_relations) == 24
    with pytest.raises(IngestError):
        intra_split(cat, "weather")


def test_split_spec_rejects_overlap():
    with pytest.raises(ValueError):
        SplitSpec("bad", (0, 1), (1, 2))


def test_mask_triples():
    a = Instance(0, ("x", "y", "z"), [Triple((0, 1), (1, 2), 0), Triple((0, 1), (2, 3), 1)])
    b = Instance(1, ("x", "y", "z"), [Triple((0, 1), (1, 2), 1)])
    kept = mask_triples([a, b], {0})
    assert [i.id for i in kept] == [0]
    assert kept[0].relation_ids() == {0}
    both = mask_triples([a, b], {0}, drop_empty=False)
    assert [i.id for i in both] == [0, 1]
    assert both[1].triples == frozenset()


# --------------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------------


def test_jsonl_roundtrip(tmp_path):
    cat = make_catalog()
    corpus = make_corpus(SynthConfig(n_instances=40), np.random.default_rng(0))
    path = tmp_path / "corpus.jsonl"
    write_instances(path, corpus, cat)
    back, warnings = read_instances(path, cat)
    assert warnings == []
    assert back == corpus


def test_jsonl_relation_accepts_name_or_id(tmp_path):
    cat = build_catalog(["/a/b/c", "/d/e/f"])
    path = tmp_path / "x.jsonl"
    rows = [
        {"id": 1, "tokens": ["u", "v", "w"],
         "triples": [{"head": [0, 1], "tail": [1, 2], "relation": "/d/e/f"}]},
        {"id": 2, "tokens": ["u", "v", "w"],
         "triples": [{"head": [0, 1], "tail": [1, 2], "relation": 0}]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n\n")
    insts, warnings = read_instances(path, cat)
    assert warnings == []
    assert [i.id for i in insts] == [1, 2]
    assert next(iter(insts[0].triples)).relation_id == 1
    assert next(iter(insts[1].triples)).relation_id == 0


@pytest.mark.parametrize(
    "line",
    [
        "{not json",
        '{"tokens": ["a"]}',  # missing id
        '{"id": 1, "tokens": ["a", "b"], "triples": [{"head": [0, 1], "tail": [1, 5], "relation": 0}]}',
        '{"id": 1, "tokens": ["a", "b"], "triples": [{"head": [0, 1], "tail": [1, 2], "relation": "/no/such/rel"}]}',
        '{"id": 1, "tokens": ["a", "b"], "triples": [{"head": [0, 1], "tail": [1, 2], "relation": 99}]}',
    ],
)
def test_jsonl_bad_lines_raise_with_location(tmp_path, line):
    cat = build_catalog(["/a/b/c"])
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(IngestError, match="bad.jsonl:1"):
        read_instances(path, cat)
    insts, warnings = read_instances(path, cat, skip_invalid=True)
    assert insts == []
    assert len(warnings) == 1 and ":1:" in warnings[0]


def test_jsonl_duplicate_ids_rejected(tmp_path):
    cat = build_catalog(["/a/b/c"])
    row = '{"id": 7, "tokens": ["a", "b"], "triples": []}'
    path = tmp_path / "dup.jsonl"
    path.write_text(row + "\n" + row + "\n")
    with pytest.raises(IngestError, match="duplicate"):
        read_instances(path, cat)
    insts, warnings = read_instances(path, cat, skip_invalid=True)
    assert len(insts) == 1
    assert len(warnings) == 1


# --------------------------------------------------------------------------
# embedding cache
# --------------------------------------------------------------------------


def _write_cache(path, records, dim=4):
    with CacheWriter(path, dim) as w:
        for iid, rid, rows in records:
            w.add(iid, rid, rows)


def test_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "emb.fsre"
    records = [
        (10, 0, rng.standard_normal((3, 4)).astype(np.float32)),
        (10, 1, rng.standard_normal((3, 4)).astype(np.float32)),
        (2**40, 7, rng.standard_normal((6, 4)).astype(np.float32)),
    ]
    _write_cache(path, records)
    cache = EmbeddingCache(path)
    assert len(cache) == 3
    assert cache.dim == 4
    assert set(cache.keys()) == {(10, 0), (10, 1), (2**40, 7)}
    assert (10, 1) in cache and (11, 0) not in cache
    for iid, rid, rows in records:
        got = cache.get(iid, rid)
        assert got.dtype == np.float32 or got.dtype == np.dtype("<f4")
        np.testing.assert_array_equal(got, rows)
    with pytest.raises(KeyError, match="no cached embedding"):
        cache.get(11, 0)


def test_cache_scan_reports_metadata(tmp_path):
    path = tmp_path / "emb.fsre"
    _write_cache(path, [(5, 2, np.zeros((2, 4), dtype=np.float32))])
    info = scan_cache(path)
    assert info["dim"] == 4
    assert info["version"] == 1
    assert info["n_records"] == 1
    assert info["n_crc_errors"] == 0
    assert info["records"][0] == {
        "instance_id": 5, "relation_id": 2, "m": 2, "crc_ok": True,
    }


def test_cache_detects_bit_rot(tmp_path):
    path = tmp_path / "emb.fsre"
    _write_cache(
        path,
        [(1, 0, np.ones((2, 4), dtype=np.float32)),
         (2, 0, np.ones((2, 4), dtype=np.float32))],
    )
    blob = bytearray(path.read_bytes())
    blob[12 + 16 + 3] ^= 0x40  # flip a bit inside the first record's payload
    path.write_bytes(bytes(blob))
    info = scan_cache(path)
    assert info["n_crc_errors"] == 1
    assert [r["crc_ok"] for r in info["records"]] == [False, True]
    with pytest.raises(CacheError, match="CRC"):
        EmbeddingCache(path)


def test_cache_structural_errors(tmp_path):
    bad_magic = tmp_path / "a.fsre"
    bad_magic.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(CacheError, match="not an embedding cache"):
        scan_cache(bad_magic)

    bad_version = tmp_path / "b.fsre"
    bad_version.write_bytes(b"FSRE" + (9).to_bytes(4, "little") + (4).to_bytes(4, "little"))
    with pytest.raises(CacheError, match="version"):
        scan_cache(bad_version)

    truncated = tmp_path / "c.fsre"
    _write_cache(truncated, [(1, 0, np.zeros((2, 4), dtype=np.float32))])
    whole = truncated.read_bytes()
    truncated.write_bytes(whole[:-6])
    with pytest.raises(CacheError, match="truncated"):
        scan_cache(truncated)

    dup = tmp_path / "d.fsre"
    _write_cache(dup, [(1, 0, np.zeros((2, 4), dtype=np.float32))] * 2)
    with pytest.raises(CacheError, match="duplicate"):
        EmbeddingCache(dup)


def test_cache_writer_validation(tmp_path):
    with pytest.raises(ValueError):
        CacheWriter(tmp_path / "x.fsre", 0)
    with CacheWriter(tmp_path / "y.fsre", 4) as w:
        with pytest.raises(ValueError):
            w.add(0, 0, np.zeros((2, 3)))
        with pytest.raises(ValueError):
            w.add(0, 0, np.zeros(4))
