"""Batch export of encoder states to the FSRE embedding cache.

For every (instance, relation) pair the encoder sees one two-segment
input: ``[CLS] description… [SEP]`` then ``sentence… [SEP]``. The first
segment has a budget of 10 pieces counting its specials, the second 50
counting the closing separator; anything larger is rejected before any
bytes are written. Last-layer states at the sentence positions are
mean-pooled from pieces back to words and written as one cache record,
so a sentence of m words always yields an (m, hidden) record.

Cache layout (little-endian), shared with the consumer:
  magic b"FSRE" | u32 version=1 | u32 dim
  per record: u64 instance_id | u32 relation_id | u32 m
              | m*dim float32 | u32 CRC-32 of the record bytes before it
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import TransformerEncoder, load_model
from .wordpiece import WordPiece

__all__ = [
    "DESC_BUDGET",
    "CONTENT_BUDGET",
    "ExportError",
    "Sentence",
    "read_catalog",
    "read_sentences",
    "description_words",
    "assemble_pair",
    "pool_words",
    "CacheRecordWriter",
    "export",
]

# Piece budgets for the two input segments, specials included:
# [CLS] + description + [SEP] within 10, sentence + [SEP] within 50.
DESC_BUDGET = 10
CONTENT_BUDGET = 50

_MAGIC = b"FSRE"
_VERSION = 1


class ExportError(ValueError):
    """Raised when input data cannot be exported."""


@dataclass(frozen=True)
class Sentence:
    """A tokenized input sentence; m is its word count."""

    id: int
    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not self.words:
            raise ExportError(f"sentence {self.id} has no words")

    @property
    def m(self) -> int:
        return len(self.words)


def description_words(name: str) -> tuple[str, ...]:
    """Slash-path relation name to description words; plain names pass through."""
    words = [p for seg in name.strip("/").split("/") for p in seg.split("_") if p]
    if not words:
        raise ExportError(f"relation name {name!r} yields no description")
    return tuple(words)


def read_catalog(path: str | Path) -> list[tuple[str, tuple[str, ...]]]:
    """(name, description words) pairs from a {"names": [...]} JSON file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        names = list(data["names"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ExportError(f"{path}: bad catalog file: {exc}") from exc
    if len(set(names)) != len(names):
        raise ExportError(f"{path}: duplicate relation names")
    return [(str(n), description_words(str(n))) for n in names]


def read_sentences(path: str | Path) -> list[Sentence]:
    """Sentences from instance JSON lines; only id and tokens are used."""
    out: list[Sentence] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sent = Sentence(int(obj["id"]), tuple(str(t) for t in obj["tokens"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ExportError(f"{path}:{lineno}: {exc}") from exc
            if sent.id in seen:
                raise ExportError(f"{path}:{lineno}: duplicate instance id {sent.id}")
            seen.add(sent.id)
            out.append(sent)
    return out


@dataclass(frozen=True)
class _Assembled:
    ids: tuple[int, ...]
    segments: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]  # absolute piece spans per word


def assemble_pair(
    vocab: WordPiece, desc: Sequence[str], sentence: Sentence
) -> _Assembled:
    """Build one encoder input, enforcing both segment budgets."""
    desc_ids, _ = vocab.encode_words(desc)
    if 2 + len(desc_ids) > DESC_BUDGET:
        raise ExportError(
            f"description {' '.join(desc)!r}: {2 + len(desc_ids)} pieces with "
            f"specials exceeds the budget of {DESC_BUDGET}"
        )
    word_ids, spans = vocab.encode_words(sentence.words)
    if len(word_ids) + 1 > CONTENT_BUDGET:
        raise ExportError(
            f"sentence {sentence.id}: {len(word_ids) + 1} pieces with separator "
            f"exceeds the budget of {CONTENT_BUDGET}"
        )
    head = [vocab.cls_id, *desc_ids, vocab.sep_id]
    ids = head + word_ids + [vocab.sep_id]
    segments = [0] * len(head) + [1] * (len(word_ids) + 1)
    offset = len(head)
    word_spans = tuple((s + offset, e + offset) for s, e in spans)
    return _Assembled(tuple(ids), tuple(segments), word_spans)


def pool_words(states: np.ndarray, word_spans: Sequence[tuple[int, int]]) -> np.ndarray:
    """Mean of each word's piece states; (m, hidden) float32."""
    rows = [states[s:e].mean(axis=0) for s, e in word_spans]
    return np.stack(rows).astype(np.float32, copy=False)


class CacheRecordWriter:
    """Sequential writer for the FSRE embedding cache format."""

    def __init__(self, path: str | Path, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._fh = open(path, "wb")
        self._fh.write(
            _MAGIC + _VERSION.to_bytes(4, "little") + int(dim).to_bytes(4, "little")
        )

    def add(self, instance_id: int, relation_id: int, rows: np.ndarray) -> None:
        rows = np.ascontiguousarray(rows, dtype="<f4")
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"rows must be (m, {self.dim}), got {rows.shape}")
        head = (
            int(instance_id).to_bytes(8, "little")
            + int(relation_id).to_bytes(4, "little")
            + int(rows.shape[0]).to_bytes(4, "little")
        )
        body = head + rows.tobytes()
        self._fh.write(body + zlib.crc32(body).to_bytes(4, "little"))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CacheRecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def export(
    sentences: Iterable[Sentence],
    catalog: Sequence[tuple[str, tuple[str, ...]]],
    model: TransformerEncoder | str | Path,
    out_path: str | Path,
    relation_ids: Sequence[int] | None = None,
    batch_size: int = 8,
) -> int:
    """Write one cache record per (sentence, relation) pair; returns the count.

    All inputs are assembled and budget-checked up front, then encoded in
    batches and written sequentially in (sentence, relation) order. The
    output file is only created once every pair has validated, so a budget
    violation never leaves a partial cache behind.
    """
    if isinstance(model, (str, Path)):
        model = load_model(model)
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    sentences = list(sentences)
    if relation_ids is None:
        relation_ids = range(len(catalog))
    pairs: list[tuple[Sentence, int, _Assembled]] = []
    for sent in sentences:
        for rid in relation_ids:
            if not 0 <= rid < len(catalog):
                raise ExportError(f"relation id {rid} outside the catalog")
            pairs.append((sent, rid, assemble_pair(model.vocab, catalog[rid][1], sent)))

    with CacheRecordWriter(out_path, model.hidden_size) as writer:
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            longest = max(len(a.ids) for _, _, a in batch)
            ids = np.full((len(batch), longest), model.vocab.pad_id, dtype=np.int64)
            segments = np.zeros((len(batch), longest), dtype=np.int64)
            mask = np.zeros((len(batch), longest), dtype=bool)
            for row, (_, _, asm) in enumerate(batch):
                n = len(asm.ids)
                ids[row, :n] = asm.ids
                segments[row, :n] = asm.segments
                mask[row, :n] = True
            states = model.forward(ids, segments, mask)
            for row, (sent, rid, asm) in enumerate(batch):
                writer.add(sent.id, rid, pool_words(states[row], asm.word_spans))
    return len(pairs)
