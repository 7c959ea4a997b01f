"""Randomized corpus builders shared across the test modules.

The matrix-scheme roundtrip test needs gold triple sets whose encoding is
uniquely decodable, so the instance generator enumerates the decodable
pair set with plain set arithmetic (independent of the library's decode)
and redraws when extra pairs would appear.
"""

import numpy as np

from fsre.types import Instance, Triple

_WORDS = (
    "ash birch cedar dune elm fern grove heath iris juniper kelp larch "
    "marsh nettle oak pine quartz reed sage thorn umber vale willow yarrow"
).split()


def matrix_candidates(triples):
    """Pairs a matrix-tag decoding would yield for these same-relation triples.

    Mirrors the decoding contract: every ordered pair of marked entity
    spans whose starts appear in the start-link set and whose ends appear
    in the end-link set.
    """
    ents = {t.head for t in triples} | {t.tail for t in triples}
    starts = {(t.head[0], t.tail[0]) for t in triples}
    ends = {(t.head[1] - 1, t.tail[1] - 1) for t in triples}
    return {
        (a, b)
        for a in ents
        for b in ents
        if (a[0], b[0]) in starts and (a[1] - 1, b[1] - 1) in ends
    }


def is_unambiguous(triples):
    """True when every per-relation group decodes back to exactly itself."""
    by_rel: dict[int, set] = {}
    for t in triples:
        by_rel.setdefault(t.relation_id, set()).add(t)
    for group in by_rel.values():
        if matrix_candidates(group) != {(t.head, t.tail) for t in group}:
            return False
    return True


def _random_span(rng, m, max_width=3):
    width = int(rng.integers(1, min(max_width, m) + 1))
    start = int(rng.integers(0, m - width + 1))
    return (start, start + width)


def random_instance(
    rng,
    iid,
    n_relations=4,
    max_m=12,
    max_triples=3,
    require_unambiguous=True,
):
    """One random instance; spans may share tokens or nest across triples."""
    m = int(rng.integers(4, max_m + 1))
    tokens = tuple(str(rng.choice(_WORDS)) for _ in range(m))
    for _ in range(200):
        n_t = int(rng.integers(0, max_triples + 1))
        triples = set()
        ok = True
        for _ in range(n_t):
            head = _random_span(rng, m)
            tail = _random_span(rng, m)
            if head == tail:
                ok = False
                break
            triples.add(Triple(head, tail, int(rng.integers(0, n_relations))))
        if not ok:
            continue
        if require_unambiguous and not is_unambiguous(triples):
            continue
        return Instance(iid, tokens, frozenset(triples))
    raise AssertionError("rejection loop failed to produce an instance")


def random_corpus(rng, n, **kwargs):
    return [random_instance(rng, iid, **kwargs) for iid in range(n)]


def single_triple_instance(rng, iid, n_relations=4, min_m=4, max_m=10, token_prefix=None):
    """Instance with exactly one triple over disjoint spans.

    The accelerated-path suite leans on this shape: with one fact per
    support instance, positives stay sparse and shortlist coverage is easy
    to reason about. ``token_prefix`` switches to globally unique tokens;
    repeated tokens hash to identical embedding rows, whose exact distance
    ties make the loss non-differentiable points that finite-difference
    checks cannot sit on.
    """
    m = int(rng.integers(min_m, max_m + 1))
    if token_prefix is None:
        tokens = tuple(str(rng.choice(_WORDS)) for _ in range(m))
    else:
        tokens = tuple(f"{token_prefix}{iid}t{p}" for p in range(m))
    while True:
        head = _random_span(rng, m, max_width=2)
        tail = _random_span(rng, m, max_width=2)
        if head[1] <= tail[0] or tail[1] <= head[0]:
            break
    rel = int(rng.integers(0, n_relations))
    return Instance(iid, tokens, frozenset({Triple(head, tail, rel)}))


def single_triple_corpus(rng, n, **kwargs):
    return [single_triple_instance(rng, iid, **kwargs) for iid in range(n)]
