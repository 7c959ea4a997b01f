"""Synthetic corpus with cleanly separable relations.

Eight relations over four entity kinds (people, companies, cities,
gadgets). Every sentence is filler tokens around a head mention, a
relation-specific connector phrase, and a tail mention, so each relation
is identified by its connector and the kinds of its arguments. Relation
names follow the slash-path convention and deliberately share description
tokens (work, home, origin, trade, person) across relations, which leaves
the relation embedding informative but not trivially separating.

One triple per sentence, disjoint argument spans, and a length floor of
six tokens are invariants the benchmark suite depends on; don't relax
them here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import build_catalog
from .types import Instance, RelationCatalog, Triple

__all__ = ["SynthConfig", "RELATION_SPECS", "make_catalog", "make_corpus"]

_PEOPLE = (
    "anna", "boris", "carla", "dmitri", "elena", "farid",
    "greta", "henrik", "irene", "jonas", "katya", "lucas",
)
_COMPANIES = ("acme", "borealis", "cobalt", "dynamo", "etna", "fjord", "gimbal", "hexon")
_CITIES = ("oslo", "prague", "quito", "riga", "salem", "tunis", "umea", "vigo")
_GADGETS = ("anvil", "beacon", "compass", "drill", "engine", "flute", "gearbox", "hammer")

_POOLS = {
    "person": _PEOPLE,
    "company": _COMPANIES,
    "city": _CITIES,
    "gadget": _GADGETS,
}
_SUFFIXES = {
    "person": ("novak", "ruiz", "tanaka"),
    "company": ("corp", "group", "labs"),
    "city": (),
    "gadget": ("unit", "kit"),
}
_FILLERS = (
    "the", "a", "report", "says", "that", "meanwhile",
    "yesterday", "officials", "noted", "apparently",
)

# name, head kind, tail kind, connector phrase choices
RELATION_SPECS: tuple[tuple[str, str, str, tuple[tuple[str, ...], ...]], ...] = (
    ("/work/person/employer", "person", "company",
     (("works", "at"), ("is", "employed", "by"))),
    ("/work/person/leads", "person", "company", (("runs",), ("leads",))),
    ("/home/person/residence", "person", "city", (("lives", "in"), ("resides", "in"))),
    ("/origin/person/birthplace", "person", "city", (("was", "born", "in"),)),
    ("/trade/company/makes", "company", "gadget", (("builds",), ("manufactures",))),
    ("/trade/company/seat", "company", "city", (("is", "based", "in"),)),
    ("/origin/gadget/maker", "gadget", "company", (("was", "created", "by"),)),
    ("/home/company/market", "company", "city", (("sells", "across"),)),
)


@dataclass(frozen=True)
class SynthConfig:
    n_instances: int = 200
    min_len: int = 6
    max_len: int = 12
    compound_prob: float = 0.25  # chance a mention carries a suffix token
    single_cue: bool = False  # restrict each relation to its first connector phrase

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be positive")
        if not 6 <= self.min_len <= self.max_len:
            raise ValueError("need 6 <= min_len <= max_len")


def make_catalog() -> RelationCatalog:
    return build_catalog([spec[0] for spec in RELATION_SPECS])


def _mention(kind: str, rng: np.random.Generator, compound_prob: float) -> list[str]:
    pool = _POOLS[kind]
    tokens = [pool[int(rng.integers(len(pool)))]]
    suffixes = _SUFFIXES[kind]
    if suffixes and rng.random() < compound_prob:
        tokens.append(suffixes[int(rng.integers(len(suffixes)))])
    return tokens


def _fillers(n: int, rng: np.random.Generator) -> list[str]:
    return [_FILLERS[int(rng.integers(len(_FILLERS)))] for _ in range(n)]


def make_corpus(
    cfg: SynthConfig,
    rng: np.random.Generator,
    start_id: int = 0,
) -> list[Instance]:
    """Generate single-triple instances, relations drawn uniformly."""
    out = []
    for i in range(cfg.n_instances):
        rid = int(rng.integers(len(RELATION_SPECS)))
        _, head_kind, tail_kind, cues = RELATION_SPECS[rid]
        head = _mention(head_kind, rng, cfg.compound_prob)
        tail = _mention(tail_kind, rng, cfg.compound_prob)
        pick = 0 if cfg.single_cue else int(rng.integers(len(cues)))
        cue = list(cues[pick])
        core = len(head) + len(cue) + len(tail)
        budget = int(rng.integers(cfg.min_len, cfg.max_len + 1)) - core
        lead = max(0, int(rng.integers(0, budget + 1))) if budget > 0 else 0
        trail = max(0, budget - lead)
        tokens = _fillers(lead, rng) + head + cue + tail + _fillers(trail, rng)
        h0 = lead
        t0 = lead + len(head) + len(cue)
        triple = Triple(
            head=(h0, h0 + len(head)),
            tail=(t0, t0 + len(tail)),
            relation_id=rid,
        )
        out.append(Instance(start_id + i, tuple(tokens), frozenset([triple])))
    return out
