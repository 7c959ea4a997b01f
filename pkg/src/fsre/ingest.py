"""Corpus ingestion: relation catalog, JSONL instances, splits, embedding cache.

The NYT-24 relation inventory ships as three fixed groups of eight. Splits
come in two flavors: cross-group (train on two groups, test on the third)
and cross-type (train on relations whose coarse type is location, business,
or sports; test on the people relations). Relation descriptions are derived
from the slash-path names, so "/people/person/place_of_birth" describes
itself as the tokens people person place of birth.

Instances travel as JSON lines; precomputed embeddings travel in a binary
cache with per-record CRCs so a foreign producer can be trusted byte by
byte.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .types import Instance, RelationCatalog, Triple, validate_instance

__all__ = [
    "NYT24_GROUPS",
    "IngestError",
    "relation_description",
    "nyt24_catalog",
    "build_catalog",
    "coarse_type",
    "SplitSpec",
    "inter_split",
    "intra_split",
    "mask_triples",
    "read_instances",
    "write_instances",
    "CacheError",
    "CacheWriter",
    "EmbeddingCache",
    "scan_cache",
]


class IngestError(ValueError):
    """Raised for malformed corpus input."""


NYT24_GROUPS: dict[str, tuple[str, ...]] = {
    "A": (
        "/people/person/ethnicity",
        "/location/location/contains",
        "/sports/sports_team_location/teams",
        "/business/company/founders",
        "/people/person/nationality",
        "/business/company/advisors",
        "/business/person/company",
        "/location/country/capital",
    ),
    "B": (
        "/people/person/place_lived",
        "/business/company_shareholder/major_shareholder_of",
        "/people/ethnicity/people",
        "/location/neighborhood/neighborhood_of",
        "/business/company/major_shareholders",
        "/people/person/place_of_birth",
        "/business/company/place_founded",
        "/sports/sports_team/location",
    ),
    "C": (
        "/location/administrative_division/country",
        "/location/country/administrative_divisions",
        "/people/person/profession",
        "/people/ethnicity/geographic_distribution",
        "/people/person/religion",
        "/people/person/children",
        "/business/company/industry",
        "/people/deceased_person/place_of_death",
    ),
}


def relation_description(name: str) -> tuple[str, ...]:
    """Token description of a slash-path relation name."""
    parts = [p for seg in name.strip("/").split("/") for p in seg.split("_") if p]
    if not parts:
        raise IngestError(f"relation name {name!r} yields no description tokens")
    return tuple(parts)


def build_catalog(names: Sequence[str]) -> RelationCatalog:
    return RelationCatalog(
        tuple(names), tuple(relation_description(n) for n in names)
    )


def nyt24_catalog() -> RelationCatalog:
    """The 24-relation catalog, ids ordered group A, then B, then C."""
    return build_catalog(
        NYT24_GROUPS["A"] + NYT24_GROUPS["B"] + NYT24_GROUPS["C"]
    )


def coarse_type(name: str) -> str:
    return name.strip("/").split("/", 1)[0]


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/test relation id sets for one evaluation setting."""

    name: str
    train_relations: tuple[int, ...]
    test_relations: tuple[int, ...]

    def __post_init__(self):
        if set(self.train_relations) & set(self.test_relations):
            raise ValueError("train and test relations overlap")


def inter_split(catalog: RelationCatalog, target_group: str) -> SplitSpec:
    """Test on one relation group, train on the other two."""
    if target_group not in NYT24_GROUPS:
        raise IngestError(f"unknown group {target_group!r}")
    test_names = set(NYT24_GROUPS[target_group])
    train, test = [], []
    for rid, name in enumerate(catalog.names):
        (test if name in test_names else train).append(rid)
    return SplitSpec(f"inter-{target_group.lower()}", tuple(train), tuple(test))


def intra_split(catalog: RelationCatalog, target_type: str = "people") -> SplitSpec:
    """Test on one coarse relation type, train on all the others."""
    train, test = [], []
    for rid, name in enumerate(catalog.names):
        (test if coarse_type(name) == target_type else train).append(rid)
    if not test:
        raise IngestError(f"no relation has coarse type {target_type!r}")
    return SplitSpec(f"intra-{target_type}", tuple(train), tuple(test))


def mask_triples(
    instances: Iterable[Instance],
    allowed: Iterable[int],
    drop_empty: bool = True,
) -> list[Instance]:
    """Restrict every instance to triples of the allowed relations."""
    allowed = frozenset(allowed)
    out = []
    for inst in instances:
        kept = frozenset(t for t in inst.triples if t.relation_id in allowed)
        if not kept and drop_empty:
            continue
        out.append(Instance(inst.id, inst.tokens, kept))
    return out


# ---------------------------------------------------------------------------
# JSONL instances
# ---------------------------------------------------------------------------


def _parse_instance(obj: dict, catalog: RelationCatalog) -> Instance:
    try:
        iid = int(obj["id"])
        tokens = tuple(str(t) for t in obj["tokens"])
        triples = []
        for t in obj.get("triples", ()):
            rel = t["relation"]
            rid = catalog.id_of(rel) if isinstance(rel, str) else int(rel)
            triples.append(
                Triple(
                    head=(int(t["head"][0]), int(t["head"][1])),
                    tail=(int(t["tail"][0]), int(t["tail"][1])),
                    relation_id=rid,
                )
            )
    except (KeyError, TypeError, IndexError) as exc:
        raise IngestError(f"bad instance record: {exc}") from exc
    inst = Instance(iid, tokens, frozenset(triples))
    problems = validate_instance(inst, catalog=catalog)
    if problems:
        raise IngestError("; ".join(problems))
    return inst


def read_instances(
    path: str | Path,
    catalog: RelationCatalog,
    skip_invalid: bool = False,
) -> tuple[list[Instance], list[str]]:
    """Read instances from JSON lines.

    Returns (instances, warnings). With skip_invalid a bad line becomes a
    warning string instead of an IngestError. Duplicate instance ids are
    always treated as bad lines.
    """
    out: list[Instance] = []
    warnings: list[str] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                inst = _parse_instance(json.loads(line), catalog)
                if inst.id in seen:
                    raise IngestError(f"duplicate instance id {inst.id}")
            except (json.JSONDecodeError, IngestError, ValueError) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if not skip_invalid:
                    raise IngestError(msg) from exc
                warnings.append(msg)
                continue
            seen.add(inst.id)
            out.append(inst)
    return out, warnings


def write_instances(
    path: str | Path, instances: Iterable[Instance], catalog: RelationCatalog
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            obj = {
                "id": inst.id,
                "tokens": list(inst.tokens),
                "triples": [
                    {
                        "head": list(t.head),
                        "tail": list(t.tail),
                        "relation": catalog.name_of(t.relation_id),
                    }
                    for t in sorted(inst.triples)
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# embedding cache
# ---------------------------------------------------------------------------
#
# magic b"FSRE" | u32 version | u32 dim | records...
# record: u64 instance_id | u32 relation_id | u32 m
#         | m*dim float32 little-endian | u32 CRC-32 of header+data

_CACHE_MAGIC = b"FSRE"
_CACHE_VERSION = 1
_HEADER = 16  # bytes before the data block of a record


class CacheError(RuntimeError):
    """Raised for malformed or corrupt embedding cache files."""


def _u32(value: int) -> bytes:
    return int(value).to_bytes(4, "little")


class CacheWriter:
    """Streaming writer for the embedding cache format."""

    def __init__(self, path: str | Path, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._fh = open(path, "wb")
        self._fh.write(_CACHE_MAGIC + _u32(_CACHE_VERSION) + _u32(dim))

    def add(self, instance_id: int, relation_id: int, rows: np.ndarray) -> None:
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"rows must be (m, {self.dim}), got {rows.shape}")
        data = np.ascontiguousarray(rows, dtype="<f4").tobytes()
        head = (
            int(instance_id).to_bytes(8, "little")
            + _u32(relation_id)
            + _u32(rows.shape[0])
        )
        self._fh.write(head + data + _u32(zlib.crc32(head + data)))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CacheWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _scan_records(blob: bytes):
    """Yield (offset, instance_id, relation_id, m, nbytes, crc_ok) per record."""
    if len(blob) < 12 or blob[:4] != _CACHE_MAGIC:
        raise CacheError("not an embedding cache file")
    version = int.from_bytes(blob[4:8], "little")
    if version != _CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    dim = int.from_bytes(blob[8:12], "little")
    if dim < 1:
        raise CacheError("cache header declares a non-positive dim")
    pos = 12
    while pos < len(blob):
        if pos + _HEADER > len(blob):
            raise CacheError(f"truncated record header at byte {pos}")
        iid = int.from_bytes(blob[pos : pos + 8], "little")
        rid = int.from_bytes(blob[pos + 8 : pos + 12], "little")
        m = int.from_bytes(blob[pos + 12 : pos + 16], "little")
        nbytes = m * dim * 4
        end = pos + _HEADER + nbytes + 4
        if end > len(blob):
            raise CacheError(f"truncated record data at byte {pos}")
        stored = int.from_bytes(blob[end - 4 : end], "little")
        ok = zlib.crc32(blob[pos : end - 4]) == stored
        yield pos, iid, rid, m, nbytes, ok
        pos = end


def scan_cache(path: str | Path) -> dict:
    """Tolerant cache inspection for reporting.

    CRC failures are counted per record rather than raised; structural
    damage (bad magic, truncation) still raises CacheError.
    """
    blob = Path(path).read_bytes()
    records = []
    n_bad = 0
    for _, iid, rid, m, _, ok in _scan_records(blob):
        records.append(
            {"instance_id": iid, "relation_id": rid, "m": m, "crc_ok": ok}
        )
        n_bad += 0 if ok else 1
    return {
        "dim": int.from_bytes(blob[8:12], "little"),
        "version": _CACHE_VERSION,
        "n_records": len(records),
        "n_crc_errors": n_bad,
        "records": records,
    }


class EmbeddingCache:
    """Strict random-access reader over a cache file held in memory."""

    def __init__(self, path: str | Path):
        self._blob = Path(path).read_bytes()
        self.dim = int.from_bytes(self._blob[8:12], "little") if len(self._blob) >= 12 else 0
        self._index: dict[tuple[int, int], tuple[int, int]] = {}
        for pos, iid, rid, m, _, ok in _scan_records(self._blob):
            if not ok:
                raise CacheError(
                    f"{path}: CRC mismatch on record ({iid}, {rid}) at byte {pos}"
                )
            if (iid, rid) in self._index:
                raise CacheError(f"{path}: duplicate record ({iid}, {rid})")
            self._index[(iid, rid)] = (pos + _HEADER, m)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self._index

    def keys(self):
        return self._index.keys()

    def get(self, instance_id: int, relation_id: int) -> np.ndarray:
        try:
            start, m = self._index[(instance_id, relation_id)]
        except KeyError:
            raise KeyError(
                f"no cached embedding for instance {instance_id}, "
                f"relation {relation_id}"
            ) from None
        data = self._blob[start : start + m * self.dim * 4]
        return np.frombuffer(data, dtype="<f4").reshape(m, self.dim).copy()
