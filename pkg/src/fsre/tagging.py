"""Invertible tagging schemes: triples in, chunked label sequences out.

Both schemes tag a sentence *for one relation at a time*: encode(m, R, r)
looks only at the triples of R carrying relation r, and decode maps a label
sequence back to that per-relation triple set.

``matrix`` scheme ("tplinker"): three m x m 0/1 matrices flattened into
three chunks of length m*m. Chunk 0 marks entity spans as (start, end-1)
cells, chunk 1 links head-start to tail-start, chunk 2 links head-end to
tail-end. Decoding intersects the three matrices, so it recovers the gold
set exactly whenever the marks pin the triples down uniquely.

``tree`` scheme ("bitt"): eight per-token chunks describing two single-level
relation trees, one per direction (head->tail and tail->head). Per direction:
boundary tags over entity mentions, a node-role tag, a parent-rank link and
a sibling-order tag. Decoding walks both directions and unions the results;
it is best effort and never raises. Roundtrip holds when no entity plays
more than one tree role per direction and ranks stay under the cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .types import ChunkLayout, LabelSeq, Span, Triple

__all__ = [
    "Scheme",
    "MatrixScheme",
    "TreeScheme",
    "get_scheme",
    "SCHEME_IDS",
]


class Scheme:
    """Interface every tagging scheme implements."""

    scheme_id: str = ""

    def layout_for(self, m: int) -> ChunkLayout:
        raise NotImplementedError

    def encode(self, m: int, triples: Iterable[Triple], relation_id: int) -> LabelSeq:
        raise NotImplementedError

    def decode(self, labels: LabelSeq, relation_id: int, m: int) -> frozenset[Triple]:
        raise NotImplementedError

    def _select(self, m: int, triples: Iterable[Triple], relation_id: int) -> list[Triple]:
        picked = []
        for t in sorted(triples):
            if t.relation_id != relation_id:
                continue
            if not t.spans_within(m):
                raise ValueError(f"triple {t} does not fit m={m}")
            picked.append(t)
        return picked


class MatrixScheme(Scheme):
    """Token-pair matrix tagging with three binary link matrices."""

    scheme_id = "tplinker"
    NUM_CHUNKS = 3
    # chunk order: entity span matrix, start-link matrix, end-link matrix
    ENT, START, END = 0, 1, 2

    def layout_for(self, m: int) -> ChunkLayout:
        if m < 1:
            raise ValueError("m must be positive")
        return ChunkLayout(self.scheme_id, self.NUM_CHUNKS, m * m, (2, 2, 2))

    def encode(self, m: int, triples: Iterable[Triple], relation_id: int) -> LabelSeq:
        layout = self.layout_for(m)
        arr = np.zeros(layout.length, dtype=np.int64)
        ent = arr[layout.chunk_slice(self.ENT)]
        start = arr[layout.chunk_slice(self.START)]
        end = arr[layout.chunk_slice(self.END)]
        for t in self._select(m, triples, relation_id):
            for s, e in (t.head, t.tail):
                ent[s * m + (e - 1)] = 1
            start[t.head[0] * m + t.tail[0]] = 1
            end[(t.head[1] - 1) * m + (t.tail[1] - 1)] = 1
        return LabelSeq(layout, arr)

    def decode(self, labels: LabelSeq, relation_id: int, m: int) -> frozenset[Triple]:
        layout = labels.layout
        if layout.scheme_id != self.scheme_id or layout.chunk_len != m * m:
            raise ValueError("label sequence does not match this scheme at given m")
        ent = labels.chunk(self.ENT).reshape(m, m)
        start = labels.chunk(self.START).reshape(m, m)
        end = labels.chunk(self.END).reshape(m, m)
        spans: list[Span] = [
            (i, j + 1) for i, j in zip(*np.nonzero(ent)) if i <= j
        ]
        out = set()
        for h in spans:
            for t in spans:
                if start[h[0], t[0]] and end[h[1] - 1, t[1] - 1]:
                    out.add(Triple(h, t, relation_id))
        return frozenset(out)


# Tree-scheme label alphabets.
_BIO_O, _BIO_B, _BIO_I, _BIO_E, _BIO_S = range(5)
_ROLE_NONE, _ROLE_PARENT, _ROLE_CHILD, _ROLE_BOTH = range(4)
_RANK_CAP = 4  # parent ranks and sibling orders above this collapse


class TreeScheme(Scheme):
    """Bidirectional single-level tree tagging over tokens.

    Chunks, in order, for each direction d in (forward, backward):
        4d + 0: entity boundary tags (O/B/I/E/S)
        4d + 1: node role in the direction-d tree (none/parent/child/both)
        4d + 2: parent rank for child tokens (0 = none, 1..cap)
        4d + 3: sibling order under that parent (0 = none, 1..cap)

    Forward trees root at head entities, backward trees at tail entities,
    so a fact lost to a role collision in one direction is usually still
    recoverable from the other.
    """

    scheme_id = "bitt"
    NUM_CHUNKS = 8
    _ALPHABETS = (5, 4, _RANK_CAP + 1, _RANK_CAP + 1) * 2

    def layout_for(self, m: int) -> ChunkLayout:
        if m < 1:
            raise ValueError("m must be positive")
        return ChunkLayout(self.scheme_id, self.NUM_CHUNKS, m, self._ALPHABETS)

    def encode(self, m: int, triples: Iterable[Triple], relation_id: int) -> LabelSeq:
        layout = self.layout_for(m)
        arr = np.zeros(layout.length, dtype=np.int64)
        picked = self._select(m, triples, relation_id)
        for d, flip in enumerate((False, True)):
            base = 4 * d
            edges = [
                ((t.tail, t.head) if flip else (t.head, t.tail)) for t in picked
            ]
            self._encode_direction(
                arr[layout.chunk_slice(base + 0)],
                arr[layout.chunk_slice(base + 1)],
                arr[layout.chunk_slice(base + 2)],
                arr[layout.chunk_slice(base + 3)],
                edges,
            )
        return LabelSeq(layout, arr)

    @staticmethod
    def _mark_boundary(row: np.ndarray, span: Span) -> None:
        s, e = span
        if e - s == 1:
            row[s] = _BIO_S
        else:
            row[s] = _BIO_B
            row[s + 1 : e - 1] = _BIO_I
            row[e - 1] = _BIO_E

    def _encode_direction(self, ent, role, rank, sib, edges) -> None:
        parents = sorted({p for p, _ in edges})
        children = sorted({c for _, c in edges})
        for span in sorted(set(parents) | set(children)):
            self._mark_boundary(ent, span)
        parent_set, child_set = set(parents), set(children)
        for span in sorted(parent_set | child_set):
            if span in parent_set and span in child_set:
                r = _ROLE_BOTH
            elif span in parent_set:
                r = _ROLE_PARENT
            else:
                r = _ROLE_CHILD
            role[span[0] : span[1]] = r
        # children sorted under each parent give sibling order
        kids: dict[Span, list[Span]] = {p: [] for p in parents}
        for p, c in sorted(set(edges)):
            kids[p].append(c)
        for c in children:
            # a child with several parents keeps the lowest-ranked one
            owners = [p for p, cc in sorted(set(edges)) if cc == c]
            p = owners[0]
            rank[c[0] : c[1]] = min(parents.index(p) + 1, _RANK_CAP)
            sib[c[0] : c[1]] = min(kids[p].index(c) + 1, _RANK_CAP)

    def decode(self, labels: LabelSeq, relation_id: int, m: int) -> frozenset[Triple]:
        layout = labels.layout
        if layout.scheme_id != self.scheme_id or layout.chunk_len != m:
            raise ValueError("label sequence does not match this scheme at given m")
        out = set()
        for d, flip in enumerate((False, True)):
            base = 4 * d
            ent = labels.chunk(base + 0)
            role = labels.chunk(base + 1)
            rank = labels.chunk(base + 2)
            spans = self._parse_boundaries(ent)
            parents = [s for s in spans if role[s[0]] in (_ROLE_PARENT, _ROLE_BOTH)]
            children = [s for s in spans if role[s[0]] in (_ROLE_CHILD, _ROLE_BOTH)]
            for c in children:
                r = int(rank[c[0]])
                if not (1 <= r <= len(parents)):
                    continue
                p = parents[r - 1]
                head, tail = (c, p) if flip else (p, c)
                out.add(Triple(head, tail, relation_id))
        return frozenset(out)

    @staticmethod
    def _parse_boundaries(ent: np.ndarray) -> list[Span]:
        """Tolerant boundary parse: malformed runs are dropped, never fatal."""
        spans: list[Span] = []
        i, m = 0, len(ent)
        while i < m:
            tag = ent[i]
            if tag == _BIO_S:
                spans.append((i, i + 1))
                i += 1
            elif tag == _BIO_B:
                j = i + 1
                while j < m and ent[j] == _BIO_I:
                    j += 1
                if j < m and ent[j] == _BIO_E:
                    spans.append((i, j + 1))
                    i = j + 1
                else:
                    i += 1
            else:
                i += 1
        return spans


_SCHEMES: dict[str, Scheme] = {
    MatrixScheme.scheme_id: MatrixScheme(),
    TreeScheme.scheme_id: TreeScheme(),
}

SCHEME_IDS = tuple(sorted(_SCHEMES))


def get_scheme(scheme_id: str) -> Scheme:
    try:
        return _SCHEMES[scheme_id]
    except KeyError:
        raise KeyError(f"unknown scheme {scheme_id!r}; choose from {SCHEME_IDS}") from None
