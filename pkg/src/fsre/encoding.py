"""Token encoders and the small trainable layers on top of them.

Two embedding providers exist: a deterministic hash encoder that needs no
model files, and a reader over precomputed embedding caches. Both yield one
row per token, already conditioned on the relation description. On top of
the frozen embeddings sit the only trainable pieces: per-role linear heads
projecting into the metric space, plus optional per-chunk classifiers used
during pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .types import Instance, RelationCatalog

__all__ = [
    "DEFAULT_EMBED_DIM",
    "DEFAULT_HIDDEN_DIM",
    "hash_embed",
    "EmbeddingProvider",
    "HashEmbeddingProvider",
    "CacheEmbeddingProvider",
    "init_pair_heads",
    "init_token_heads",
    "init_pair_classifier",
    "init_token_classifier",
    "pair_heads",
    "token_heads",
    "pair_logits",
    "token_logits",
]

DEFAULT_EMBED_DIM = 64
DEFAULT_HIDDEN_DIM = 32

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_MIX_K = np.uint64(0x9E3779B97F4A7C15)
_MIX_SEED = np.uint64(0xBF58476D1CE4E5B9)
_FMIX_1 = np.uint64(0xFF51AFD7ED558CCD)
_FMIX_2 = np.uint64(0xC4CEB9FE1A85EC53)
_U53 = float(1 << 53)


def _fnv1a64(token: str) -> np.uint64:
    h = int(_FNV_OFFSET)
    for b in token.encode("utf-8"):
        h = ((h ^ b) * int(_FNV_PRIME)) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(h)


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Pseudorandom unit-scale direction for one token, bit-reproducible."""
    k = np.arange(dim, dtype=np.uint64)
    # seed mix is computed in Python ints: uint64 scalar products warn on wrap
    seed_mix = np.uint64((seed * int(_MIX_SEED)) & 0xFFFFFFFFFFFFFFFF)
    x = _fnv1a64(token) ^ (k * _MIX_K) ^ seed_mix
    x ^= x >> np.uint64(33)
    x *= _FMIX_1
    x ^= x >> np.uint64(33)
    x *= _FMIX_2
    x ^= x >> np.uint64(33)
    u = (x >> np.uint64(11)).astype(np.float64) / _U53  # [0, 1)
    return 2.0 * u - 1.0


def hash_embed(
    tokens: Sequence[str],
    relation_tokens: Sequence[str],
    dim: int = DEFAULT_EMBED_DIM,
    seed: int = 0,
    _cache: dict | None = None,
) -> np.ndarray:
    """Deterministic relation-conditioned token embeddings.

    Each token gets a hashed base direction; its row mixes in the mean of
    the relation-description directions and a half-weighted neighbor
    average, then is L2-normalized. Rows come out unit norm (1e-12) and
    identical across platforms for identical inputs.
    """
    if dim < 8:
        raise ValueError("dim must be at least 8")
    if len(tokens) == 0:
        raise ValueError("tokens must be non-empty")
    if len(relation_tokens) == 0:
        raise ValueError("relation_tokens must be non-empty")

    def vec(tok: str) -> np.ndarray:
        if _cache is None:
            return _token_vector(tok, dim, seed)
        key = (tok, dim, seed)
        v = _cache.get(key)
        if v is None:
            v = _token_vector(tok, dim, seed)
            _cache[key] = v
        return v

    base = np.stack([vec(t) for t in tokens])
    rel = np.stack([vec(t) for t in relation_tokens]).mean(axis=0)
    out = base + 0.5 * rel
    out[1:] += 0.25 * base[:-1]
    out[:-1] += 0.25 * base[1:]
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / norms


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, inst: Instance, relation_id: int) -> np.ndarray:
        """Return an (m, dim) float array for the instance under one relation."""
        ...


class HashEmbeddingProvider:
    """Hash-encoder provider; memoizes per-token directions and full rows."""

    def __init__(self, catalog: RelationCatalog, dim: int = DEFAULT_EMBED_DIM, seed: int = 0):
        self.catalog = catalog
        self.dim = dim
        self.seed = seed
        self._token_cache: dict = {}
        self._row_cache: dict = {}

    def embed(self, inst: Instance, relation_id: int) -> np.ndarray:
        key = (inst.id, inst.tokens, relation_id)
        m = self._row_cache.get(key)
        if m is None:
            m = hash_embed(
                inst.tokens,
                self.catalog.description(relation_id),
                dim=self.dim,
                seed=self.seed,
                _cache=self._token_cache,
            )
            m.setflags(write=False)
            self._row_cache[key] = m
        return m


class CacheEmbeddingProvider:
    """Provider backed by a precomputed embedding cache file."""

    def __init__(self, cache):
        # `cache` is an ingest.EmbeddingCache; typed loosely to avoid a cycle.
        self.cache = cache
        self.dim = cache.dim

    def embed(self, inst: Instance, relation_id: int) -> np.ndarray:
        rows = self.cache.get(inst.id, relation_id)
        if rows.shape[0] != inst.m:
            raise ValueError(
                f"cache has {rows.shape[0]} rows for instance {inst.id}, expected {inst.m}"
            )
        return rows.astype(np.float64)


# ---------------------------------------------------------------------------
# trainable parameters
#
# Parameters travel as flat {name: array} dicts so the optimizer and the
# finite-difference tests can treat them uniformly.
# ---------------------------------------------------------------------------


def _init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))


def init_pair_heads(dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Two linear heads: one for the row role, one for the column role."""
    return {
        "w_h": _init_linear(rng, dim, hidden),
        "b_h": np.zeros(hidden),
        "w_t": _init_linear(rng, dim, hidden),
        "b_t": np.zeros(hidden),
    }


def init_token_heads(
    dim: int, hidden: int, num_chunks: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """One linear head per chunk for token-level schemes."""
    out: dict[str, np.ndarray] = {}
    for c in range(num_chunks):
        out[f"w_c{c}"] = _init_linear(rng, dim, hidden)
        out[f"b_c{c}"] = np.zeros(hidden)
    return out


def init_pair_classifier(
    hidden: int, num_chunks: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Per-chunk binary classifiers over concatenated pair states."""
    out: dict[str, np.ndarray] = {}
    for c in range(num_chunks):
        out[f"cls_w{c}"] = _init_linear(rng, 2 * hidden, 2)
        out[f"cls_b{c}"] = np.zeros(2)
    return out


def init_token_classifier(
    hidden: int, alphabet_sizes: Sequence[int], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for c, n_labels in enumerate(alphabet_sizes):
        out[f"cls_w{c}"] = _init_linear(rng, hidden, n_labels)
        out[f"cls_b{c}"] = np.zeros(n_labels)
    return out


def pair_heads(emb: np.ndarray, params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Project embeddings through the row-role and column-role heads."""
    h_row = emb @ params["w_h"] + params["b_h"]
    h_col = emb @ params["w_t"] + params["b_t"]
    return h_row, h_col


def token_heads(
    emb: np.ndarray, params: dict[str, np.ndarray], num_chunks: int
) -> list[np.ndarray]:
    return [emb @ params[f"w_c{c}"] + params[f"b_c{c}"] for c in range(num_chunks)]


def pair_logits(
    h_row: np.ndarray,
    h_col: np.ndarray,
    classifier: dict[str, np.ndarray],
    chunk: int,
) -> np.ndarray:
    """Label scores for every (i, j) cell of one pair-matrix chunk.

    The classifier acts on the concatenated pair state [h_row[i]; h_col[j]];
    splitting its weight rows lets us score all cells without materializing
    the m*m concatenations.
    """
    w = classifier[f"cls_w{chunk}"]
    b = classifier[f"cls_b{chunk}"]
    hidden = h_row.shape[1]
    a = h_row @ w[:hidden]
    c = h_col @ w[hidden:]
    return a[:, None, :] + c[None, :, :] + b


def token_logits(
    h_chunks: Sequence[np.ndarray],
    classifier: dict[str, np.ndarray],
) -> list[np.ndarray]:
    """Per-token label scores for every chunk of a token-level scheme."""
    return [
        h @ classifier[f"cls_w{c}"] + classifier[f"cls_b{c}"]
        for c, h in enumerate(h_chunks)
    ]
