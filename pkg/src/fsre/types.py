"""Core domain types shared across the package.

Everything here is plain data: token sequences, relational facts, chunked
label layouts, and episode containers. No I/O, no numerics beyond shape
checks on label arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "DEFAULT_MAX_SEQ_LEN",
    "Span",
    "Triple",
    "Instance",
    "RelationCatalog",
    "ChunkLayout",
    "LabelSeq",
    "SupportExample",
    "Episode",
    "validate_instance",
    "position_to_chunk",
    "chunk_position",
]

Span = tuple[int, int]

# Budget for one encoded input, in content tokens. Chosen so that a
# sentence plus its separator stays within a 50-token window.
DEFAULT_MAX_SEQ_LEN = 49


@dataclass(frozen=True, order=True)
class Triple:
    """One relational fact inside an instance.

    Attributes:
        head: half-open token span [start, end) of the subject entity.
        tail: half-open token span of the object entity.
        relation_id: id into a RelationCatalog.
    """

    head: Span
    tail: Span
    relation_id: int

    def __post_init__(self):
        for name, span in (("head", self.head), ("tail", self.tail)):
            if len(span) != 2:
                raise ValueError(f"{name} span must be a (start, end) pair")
            s, e = int(span[0]), int(span[1])
            if not (0 <= s < e):
                raise ValueError(f"{name} span {span!r}: need 0 <= start < end")
            # normalize numpy integers away so hashing and JSON stay plain
            object.__setattr__(self, name, (s, e))
        object.__setattr__(self, "relation_id", int(self.relation_id))
        if self.relation_id < 0:
            raise ValueError("relation_id must be non-negative")

    def spans_within(self, m: int) -> bool:
        return self.head[1] <= m and self.tail[1] <= m


@dataclass(frozen=True)
class Instance:
    """A tokenized sentence with its gold triples."""

    id: int
    tokens: tuple[str, ...]
    triples: frozenset[Triple] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "triples", frozenset(self.triples))

    @property
    def m(self) -> int:
        return len(self.tokens)

    def relation_ids(self) -> frozenset[int]:
        return frozenset(t.relation_id for t in self.triples)


def validate_instance(
    inst: Instance,
    max_len: int = DEFAULT_MAX_SEQ_LEN,
    catalog: "RelationCatalog | None" = None,
) -> list[str]:
    """Check an instance against the well-formedness rules.

    Returns a list of human-readable violations; empty means valid.
    Violations are data, not exceptions, so ingestion can report and skip.
    """
    out: list[str] = []
    m = inst.m
    if m < 1:
        out.append("instance has no tokens")
    if m > max_len:
        out.append(f"length {m} exceeds max_len {max_len}")
    for t in sorted(inst.triples):
        if not t.spans_within(m):
            out.append(f"triple {t.head}->{t.tail} spans outside m={m}")
        if catalog is not None and t.relation_id not in catalog:
            out.append(f"unknown relation_id {t.relation_id}")
    return out


class RelationCatalog:
    """Immutable registry of relation categories.

    Each entry pairs an integer id (its index) with a name and a short
    description token sequence used to condition the encoder.
    """

    MAX_DESCRIPTION_TOKENS = 10

    def __init__(self, names: Sequence[str], descriptions: Sequence[Sequence[str]]):
        if len(names) != len(descriptions):
            raise ValueError("names and descriptions must align")
        if len(set(names)) != len(names):
            raise ValueError("relation names must be unique")
        self._names = tuple(names)
        descs = []
        for name, d in zip(names, descriptions):
            d = tuple(d)
            if not d:
                raise ValueError(f"empty description for {name!r}")
            if len(d) > self.MAX_DESCRIPTION_TOKENS:
                raise ValueError(
                    f"description for {name!r} has {len(d)} tokens "
                    f"(max {self.MAX_DESCRIPTION_TOKENS})"
                )
            descs.append(d)
        self._descriptions = tuple(descs)
        self._by_name = {n: i for i, n in enumerate(self._names)}

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, relation_id: int) -> bool:
        return 0 <= relation_id < len(self._names)

    def __iter__(self) -> Iterator[int]:
        return iter(range(len(self._names)))

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown relation name {name!r}") from None

    def name_of(self, relation_id: int) -> str:
        self._check(relation_id)
        return self._names[relation_id]

    def description(self, relation_id: int) -> tuple[str, ...]:
        self._check(relation_id)
        return self._descriptions[relation_id]

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def _check(self, relation_id: int) -> None:
        if relation_id not in self:
            raise KeyError(f"relation_id {relation_id} out of range")


@dataclass(frozen=True)
class ChunkLayout:
    """Shape of a chunked label sequence.

    A label sequence of total length ``num_chunks * chunk_len`` splits into
    equal chunks; chunk c covers positions [c*chunk_len, (c+1)*chunk_len).
    Each chunk has its own label alphabet size. Distances and losses never
    cross chunk boundaries, so this layout is the unit every downstream
    kernel works against.
    """

    scheme_id: str
    num_chunks: int
    chunk_len: int
    alphabet_sizes: tuple[int, ...]

    def __post_init__(self):
        if self.num_chunks < 1 or self.chunk_len < 1:
            raise ValueError("num_chunks and chunk_len must be positive")
        if len(self.alphabet_sizes) != self.num_chunks:
            raise ValueError("need one alphabet size per chunk")
        if any(a < 2 for a in self.alphabet_sizes):
            raise ValueError("alphabet sizes must be at least 2")

    @property
    def length(self) -> int:
        return self.num_chunks * self.chunk_len

    def chunk_slice(self, c: int) -> slice:
        if not (0 <= c < self.num_chunks):
            raise IndexError(f"chunk {c} out of range")
        return slice(c * self.chunk_len, (c + 1) * self.chunk_len)


def position_to_chunk(p: int, layout: ChunkLayout) -> tuple[int, int]:
    """Map a flat label position to (chunk index, offset within chunk)."""
    if not (0 <= p < layout.length):
        raise IndexError(f"position {p} outside label sequence of length {layout.length}")
    return divmod(p, layout.chunk_len)


def chunk_position(c: int, i: int, layout: ChunkLayout) -> int:
    """Inverse of position_to_chunk."""
    if not (0 <= c < layout.num_chunks):
        raise IndexError(f"chunk {c} out of range")
    if not (0 <= i < layout.chunk_len):
        raise IndexError(f"offset {i} outside chunk of length {layout.chunk_len}")
    return c * layout.chunk_len + i


class LabelSeq:
    """An integer label sequence laid out in chunks.

    Wraps a read-only int64 array of length ``layout.length`` and checks
    every chunk against its alphabet on construction.
    """

    __slots__ = ("layout", "labels")

    def __init__(self, layout: ChunkLayout, labels: np.ndarray):
        arr = np.asarray(labels, dtype=np.int64).copy()
        if arr.shape != (layout.length,):
            raise ValueError(
                f"labels shape {arr.shape} does not match layout length {layout.length}"
            )
        for c, size in enumerate(layout.alphabet_sizes):
            chunk = arr[layout.chunk_slice(c)]
            if chunk.size and (chunk.min() < 0 or chunk.max() >= size):
                raise ValueError(f"chunk {c} has labels outside [0, {size})")
        arr.setflags(write=False)
        self.layout = layout
        self.labels = arr

    def chunk(self, c: int) -> np.ndarray:
        return self.labels[self.layout.chunk_slice(c)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelSeq):
            return NotImplemented
        return self.layout == other.layout and bool(np.array_equal(self.labels, other.labels))

    def __repr__(self) -> str:
        return f"LabelSeq({self.layout.scheme_id}, n={self.layout.length})"


@dataclass(frozen=True)
class SupportExample:
    """One support instance with its per-category label sequences."""

    instance: Instance
    label_seqs: tuple[LabelSeq, ...]


@dataclass(frozen=True)
class Episode:
    """An N-way episode: categories, labeled support set, one query."""

    categories: tuple[int, ...]
    support: tuple[SupportExample, ...]
    query: Instance
    query_gold: frozenset[Triple]

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("episode categories must be distinct")
        for ex in self.support:
            if len(ex.label_seqs) != len(self.categories):
                raise ValueError("each support example needs one label seq per category")

    def category_counts(self) -> dict[int, int]:
        """Number of support instances containing at least one triple per category."""
        out = {c: 0 for c in self.categories}
        for ex in self.support:
            seen = ex.instance.relation_ids()
            for c in self.categories:
                if c in seen:
                    out[c] += 1
        return out
