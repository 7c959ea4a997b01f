"""Episodic sampling, nearest-neighbor label inference, and metric training.

Training and inference share one forward layout per (episode, category):
embed query and support under the category's relation, project through the
heads, and compare in the metric space chunk by chunk. Inference assigns
each query position the label of its nearest support position (exact
distances); training softmins per-label distances into a cross-entropy.

All gradients are analytic. Mins and shortlist selections are treated as
fixed routings for the step: the gradient flows through the selected
entries only, with ties resolved toward the lowest (instance, row, col)
index. Support examples are canonically ordered by instance id before any
distance work, so permuting a support set never changes an outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import encoding, metricspace
from .metricspace import (
    NegativeFill,
    OpCounter,
    PrototypeBank,
    SupportColumns,
    fill_negative,
    fill_positive,
    prototype_update,
    sqdist,
    top_candidates,
)
from .tagging import MatrixScheme, Scheme, TreeScheme
from .types import ChunkLayout, Episode, Instance, LabelSeq, SupportExample, Triple

__all__ = [
    "SamplerConfig",
    "SamplingError",
    "sample_episode",
    "LossConfig",
    "chunk_loss",
    "loss_and_grads",
    "predict_labels",
    "predict_triples",
    "AdamOptimizer",
    "TrainState",
    "init_train_state",
    "pretrain_step",
    "finetune_step",
    "pretrain_examples",
    "run_pretrain",
    "run_finetune",
]


# ---------------------------------------------------------------------------
# episodic sampling
# ---------------------------------------------------------------------------


class SamplingError(RuntimeError):
    """Raised when an episode cannot be assembled from the given pool."""


@dataclass(frozen=True)
class SamplerConfig:
    """N-way K~2K-shot sampling parameters."""

    n_ways: int = 2
    k_shots: int = 1
    max_attempts: int = 2000

    def __post_init__(self):
        if self.n_ways < 1 or self.k_shots < 1:
            raise ValueError("n_ways and k_shots must be positive")


def sample_episode(
    instances: Sequence[Instance],
    categories: Sequence[int],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    scheme: Scheme,
) -> Episode:
    """Greedy rejection sampler for one episode.

    Instances are drawn uniformly; a draw is accepted when it contributes
    at least one episode category and pushes no per-category count past
    2K. Sampling continues while any category count is below K. The
    support set has set semantics: re-drawing an already accepted instance
    is a no-op. Accepted instances are ordered by id in the episode.
    """
    cats = tuple(categories)
    if len(cats) != cfg.n_ways:
        raise ValueError(f"expected {cfg.n_ways} categories, got {len(cats)}")
    if len(set(cats)) != len(cats):
        raise ValueError("categories must be distinct")
    k = cfg.k_shots
    cat_set = set(cats)

    for c in cats:
        have = sum(1 for x in instances if c in x.relation_ids())
        if have < k:
            raise SamplingError(f"category {c} has only {have} instances, need {k}")

    counts = {c: 0 for c in cats}
    chosen: dict[int, Instance] = {}
    attempts = 0
    while any(counts[c] < k for c in cats):
        if attempts >= cfg.max_attempts:
            raise SamplingError(
                f"no valid support set after {cfg.max_attempts} draws"
            )
        attempts += 1
        inst = instances[int(rng.integers(len(instances)))]
        if inst.id in chosen:
            continue
        gain = [c for c in cats if c in inst.relation_ids()]
        if not gain:
            continue
        if any(counts[c] + 1 > 2 * k for c in gain):
            continue
        for c in gain:
            counts[c] += 1
        chosen[inst.id] = inst

    pool = [
        x for x in instances if x.id not in chosen and (x.relation_ids() & cat_set)
    ]
    if not pool:
        raise SamplingError("no instance left to serve as query")
    query = pool[int(rng.integers(len(pool)))]

    support = tuple(
        SupportExample(
            inst, tuple(scheme.encode(inst.m, inst.triples, c) for c in cats)
        )
        for inst in sorted(chosen.values(), key=lambda x: x.id)
    )
    gold = frozenset(t for t in query.triples if t.relation_id in cat_set)
    return Episode(cats, support, query, gold)


# ---------------------------------------------------------------------------
# shared forward plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    """Knobs of the episodic training loss."""

    neg_mode: str = "min"  # negative fill reduction: "min" or "avg"
    distance: str = "accel"  # pair-chunk label distances: "accel" or "exact"
    top_e: int = 3

    def __post_init__(self):
        if self.neg_mode not in ("min", "avg"):
            raise ValueError("neg_mode must be 'min' or 'avg'")
        if self.distance not in ("accel", "exact"):
            raise ValueError("distance must be 'accel' or 'exact'")
        if self.top_e < metricspace.MIN_SHORTLIST:
            raise ValueError(f"top_e must be at least {metricspace.MIN_SHORTLIST}")


def _sorted_support(episode: Episode) -> list[SupportExample]:
    return sorted(episode.support, key=lambda ex: ex.instance.id)


@dataclass
class _PairForward:
    """Everything the pair-matrix loss and inference need for one category."""

    e_q: np.ndarray
    e_s: np.ndarray  # support embeddings, concatenated (M, d)
    h_q_row: np.ndarray
    h_q_col: np.ndarray
    h_s_row: np.ndarray
    h_s_col: np.ndarray
    d_h: np.ndarray
    d_t: np.ndarray
    columns: SupportColumns
    support: list[SupportExample]
    m_q: int


def _pair_forward(
    episode: Episode,
    ci: int,
    params: dict[str, np.ndarray],
    provider: encoding.EmbeddingProvider,
    counter: OpCounter | None = None,
) -> _PairForward:
    relation_id = episode.categories[ci]
    support = _sorted_support(episode)
    e_q = provider.embed(episode.query, relation_id)
    e_parts = [provider.embed(ex.instance, relation_id) for ex in support]
    e_s = np.vstack(e_parts)
    h_q_row, h_q_col = encoding.pair_heads(e_q, params)
    h_s_row, h_s_col = encoding.pair_heads(e_s, params)
    d_h = sqdist(h_q_row, h_s_row, counter)
    d_t = sqdist(h_q_col, h_s_col, counter)
    columns = SupportColumns(tuple(ex.instance.m for ex in support))
    return _PairForward(
        e_q, e_s, h_q_row, h_q_col, h_s_row, h_s_col, d_h, d_t, columns,
        support, episode.query.m,
    )


def _pair_positive_cells(
    support: Sequence[SupportExample], ci: int, chunk: int, columns: SupportColumns
) -> np.ndarray:
    """Global (col_h, col_t) pairs of support cells labeled 1 in one chunk."""
    parts = []
    for s, ex in enumerate(support):
        m_s = ex.instance.m
        mat = ex.label_seqs[ci].chunk(chunk).reshape(m_s, m_s)
        rows, cols = np.nonzero(mat)
        off = columns.offsets[s]
        if rows.size:
            parts.append(np.stack((rows + off, cols + off), axis=-1))
    if not parts:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)


def _support_chunk_labels(
    support: Sequence[SupportExample], ci: int, chunk: int
) -> np.ndarray:
    return np.concatenate([ex.label_seqs[ci].chunk(chunk) for ex in support])


# ---------------------------------------------------------------------------
# softmin cross-entropy
# ---------------------------------------------------------------------------


def _softmin_ce(
    dists: np.ndarray, gold: np.ndarray, weight: float
) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy of softmin(-distances) rows against gold labels.

    Rows may carry +inf for unavailable labels; callers must drop rows whose
    gold label is unavailable. Returns (loss, dL/d dists) where the gradient
    is weight * (onehot - softmin) per row.
    """
    if dists.shape[0] == 0:
        return 0.0, np.zeros_like(dists)
    z = -dists
    zmax = np.max(z, axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    p = ez / denom
    rows = np.arange(dists.shape[0])
    logp_gold = z[rows, gold] - (zmax[:, 0] + np.log(denom[:, 0]))
    loss = -weight * float(logp_gold.sum())
    grad = -p
    grad[rows, gold] += 1.0
    return loss, weight * grad


def chunk_loss(
    dists: np.ndarray,
    gold: np.ndarray,
    layout: ChunkLayout,
    chunk: int,
) -> float:
    """Softmin cross-entropy of one chunk under the episodic weighting.

    ``dists`` is (chunk_len, n_labels) per-label distances (+inf where a
    label has no source); ``gold`` the chunk's gold labels. The loss is
    scaled by num_chunks / (total_len * n_labels), which deliberately
    divides by the label-alphabet size as well as the sequence length.
    Positions whose gold label is unavailable are skipped.
    """
    n_labels = layout.alphabet_sizes[chunk]
    if dists.shape != (layout.chunk_len, n_labels):
        raise ValueError(
            f"dists shape {dists.shape} does not match chunk {chunk} of {layout}"
        )
    gold = np.asarray(gold, dtype=np.int64)
    weight = layout.num_chunks / (layout.length * n_labels)
    usable = np.isfinite(dists[np.arange(dists.shape[0]), gold])
    loss, _ = _softmin_ce(dists[usable], gold[usable], weight)
    return loss


# ---------------------------------------------------------------------------
# loss and analytic gradients
# ---------------------------------------------------------------------------


def loss_and_grads(
    episode: Episode,
    params: dict[str, np.ndarray],
    scheme: Scheme,
    provider: encoding.EmbeddingProvider,
    cfg: LossConfig = LossConfig(),
    prototypes: PrototypeBank | None = None,
    counter: OpCounter | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Episode loss averaged over categories, with gradients for every head.

    With all-zero heads every distance collapses to zero, the softmin is
    uniform, and the returned gradients are exactly zero.
    """
    if isinstance(scheme, MatrixScheme):
        return _pair_loss_and_grads(episode, params, scheme, provider, cfg, counter)
    if isinstance(scheme, TreeScheme):
        return _token_loss_and_grads(
            episode, params, scheme, provider, prototypes, counter
        )
    raise TypeError(f"unsupported scheme {scheme!r}")


def _route_sqdist_backward(
    g_d: np.ndarray,
    h_q: np.ndarray,
    h_s: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of D[p, q] = ||h_q[p] - h_s[q]||^2 given dL/dD."""
    g_hq = 2.0 * (g_d.sum(axis=1)[:, None] * h_q - g_d @ h_s)
    g_hs = 2.0 * (g_d.sum(axis=0)[:, None] * h_s - g_d.T @ h_q)
    return g_hq, g_hs


def _pair_loss_and_grads(episode, params, scheme, provider, cfg, counter):
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n_cats = len(episode.categories)
    total = 0.0
    for ci, relation_id in enumerate(episode.categories):
        ctx = _pair_forward(episode, ci, params, provider, counter)
        m = ctx.m_q
        layout = scheme.layout_for(m)
        gold_seq = scheme.encode(m, episode.query_gold, relation_id)
        g_dh = np.zeros_like(ctx.d_h)
        g_dt = np.zeros_like(ctx.d_t)
        igrid, jgrid = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        for chunk in range(layout.num_chunks):
            cells = _pair_positive_cells(ctx.support, ci, chunk, ctx.columns)
            gold = gold_seq.chunk(chunk).reshape(m, m)
            weight = 1.0 / (layout.length * 2 * n_cats)
            if cfg.distance == "accel":
                d_p, p_idx = fill_positive(ctx.d_h, ctx.d_t, cells, counter)
                top = top_candidates(ctx.d_h, ctx.d_t, ctx.columns, cfg.top_e, counter)
                neg = fill_negative(top, d_p, cfg.neg_mode)
                dist = np.full((m, m, 2), np.inf)
                dist[..., 0][neg.available] = neg.values[neg.available]
                if d_p is not None:
                    dist[..., 1] = d_p
                loss, g = _ce_grid(dist, gold, weight)
                total += loss
                if d_p is not None:
                    _route_cells(g_dh, g_dt, igrid, jgrid, cells[p_idx], g[..., 1])
                _route_negative(g_dh, g_dt, igrid, jgrid, top, neg, g[..., 0])
            else:
                exact = metricspace.exact_pair_label_distances(
                    ctx.d_h, ctx.d_t, ctx.columns, cells, counter
                )
                dist = np.full((m, m, 2), np.inf)
                for label in (0, 1):
                    v, _ = exact[label]
                    if v is not None:
                        dist[..., label] = v
                loss, g = _ce_grid(dist, gold, weight)
                total += loss
                for label in (0, 1):
                    v, cell = exact[label]
                    if v is not None:
                        _route_cells(g_dh, g_dt, igrid, jgrid, cell, g[..., label])
        g_hq_row, g_hs_row = _route_sqdist_backward(g_dh, ctx.h_q_row, ctx.h_s_row)
        g_hq_col, g_hs_col = _route_sqdist_backward(g_dt, ctx.h_q_col, ctx.h_s_col)
        grads["w_h"] += ctx.e_q.T @ g_hq_row + ctx.e_s.T @ g_hs_row
        grads["b_h"] += g_hq_row.sum(axis=0) + g_hs_row.sum(axis=0)
        grads["w_t"] += ctx.e_q.T @ g_hq_col + ctx.e_s.T @ g_hs_col
        grads["b_t"] += g_hq_col.sum(axis=0) + g_hs_col.sum(axis=0)
    return total, grads


def _ce_grid(
    dist: np.ndarray, gold: np.ndarray, weight: float
) -> tuple[float, np.ndarray]:
    """Cross-entropy over an (m, m, L) distance grid; returns grid gradient."""
    m = dist.shape[0]
    flat = dist.reshape(m * m, -1)
    gold_flat = gold.reshape(m * m)
    usable = np.isfinite(flat[np.arange(m * m), gold_flat])
    loss, g_used = _softmin_ce(flat[usable], gold_flat[usable], weight)
    g = np.zeros_like(flat)
    g[usable] = g_used
    return loss, g.reshape(dist.shape)


def _route_cells(g_dh, g_dt, igrid, jgrid, cell_grid, g):
    """Accumulate per-cell gradients into d_h/d_t via routed support cells."""
    np.add.at(g_dh, (igrid, cell_grid[..., 0]), g)
    np.add.at(g_dt, (jgrid, cell_grid[..., 1]), g)


def _route_negative(g_dh, g_dt, igrid, jgrid, top, neg: NegativeFill, g):
    if neg.mode == "min":
        ok = neg.available
        ii, jj = igrid[ok], jgrid[ok]
        pick = neg.picked[ok][:, None]
        ch = np.take_along_axis(top.cols_h[ok], pick, axis=-1)[:, 0]
        ct = np.take_along_axis(top.cols_t[ok], pick, axis=-1)[:, 0]
        np.add.at(g_dh, (ii, ch), g[ok])
        np.add.at(g_dt, (jj, ct), g[ok])
    else:
        w = g[..., None] * neg.weights
        ii = np.broadcast_to(igrid[..., None], w.shape)
        jj = np.broadcast_to(jgrid[..., None], w.shape)
        np.add.at(g_dh, (ii, top.cols_h), w)
        np.add.at(g_dt, (jj, top.cols_t), w)


def _token_loss_and_grads(episode, params, scheme, provider, prototypes, counter):
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n_cats = len(episode.categories)
    total = 0.0
    num_chunks = scheme.NUM_CHUNKS
    if prototypes is None:
        hidden = params["w_c0"].shape[1]
        prototypes = PrototypeBank.zeros(scheme.layout_for(1).alphabet_sizes, hidden)
    for ci, relation_id in enumerate(episode.categories):
        support = _sorted_support(episode)
        m = episode.query.m
        layout = scheme.layout_for(m)
        gold_seq = scheme.encode(m, episode.query_gold, relation_id)
        e_q = provider.embed(episode.query, relation_id)
        e_s = np.vstack([provider.embed(ex.instance, relation_id) for ex in support])
        h_q = encoding.token_heads(e_q, params, num_chunks)
        h_s = encoding.token_heads(e_s, params, num_chunks)
        for chunk in range(num_chunks):
            n_labels = layout.alphabet_sizes[chunk]
            d_c = sqdist(h_q[chunk], h_s[chunk], counter)
            labels_c = _support_chunk_labels(support, ci, chunk)
            dist, src = metricspace.token_label_distances(
                d_c, labels_c, n_labels, h_q[chunk], prototypes.vectors[chunk], counter
            )
            gold = gold_seq.chunk(chunk)
            weight = 1.0 / (layout.length * n_labels * n_cats)
            loss, g = _softmin_ce(dist, gold, weight)
            total += loss
            g_dc = np.zeros_like(d_c)
            g_hq = np.zeros_like(h_q[chunk])
            sup_mask = src >= 0
            pos_idx = np.nonzero(sup_mask)[0]
            np.add.at(g_dc, (pos_idx, src[sup_mask]), g[sup_mask])
            proto_mask = ~sup_mask
            if proto_mask.any():
                pos_idx, lab_idx = np.nonzero(proto_mask)
                diff = h_q[chunk][pos_idx] - prototypes.vectors[chunk][lab_idx]
                np.add.at(g_hq, pos_idx, 2.0 * g[proto_mask][:, None] * diff)
            gq, gs = _route_sqdist_backward(g_dc, h_q[chunk], h_s[chunk])
            g_hq += gq
            grads[f"w_c{chunk}"] += e_q.T @ g_hq + e_s.T @ gs
            grads[f"b_c{chunk}"] += g_hq.sum(axis=0) + gs.sum(axis=0)
    return total, grads


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def predict_labels(
    episode: Episode,
    ci: int,
    params: dict[str, np.ndarray],
    scheme: Scheme,
    provider: encoding.EmbeddingProvider,
    prototypes: PrototypeBank | None = None,
    counter: OpCounter | None = None,
) -> LabelSeq:
    """Nearest-support-position labels for one episode category.

    Inference always uses exact distances; the shortlist approximation is
    a training-time device. Ties go to the lowest (instance, row, col)
    support position under the canonical id ordering.
    """
    if isinstance(scheme, MatrixScheme):
        return _predict_pair_labels(episode, ci, params, scheme, provider, counter)
    if isinstance(scheme, TreeScheme):
        return _predict_token_labels(
            episode, ci, params, scheme, provider, prototypes, counter
        )
    raise TypeError(f"unsupported scheme {scheme!r}")


def _predict_pair_labels(episode, ci, params, scheme, provider, counter):
    ctx = _pair_forward(episode, ci, params, provider, counter)
    m = ctx.m_q
    layout = scheme.layout_for(m)
    out = np.zeros(layout.length, dtype=np.int64)
    n_support = len(ctx.support)
    best_h_idx = np.empty((n_support, m), dtype=np.int64)
    best_h_val = np.empty((n_support, m))
    best_t_idx = np.empty((n_support, m), dtype=np.int64)
    best_t_val = np.empty((n_support, m))
    for s in range(n_support):
        block = ctx.columns.block(s)
        dh_b = ctx.d_h[:, block]
        dt_b = ctx.d_t[:, block]
        best_h_idx[s] = np.argmin(dh_b, axis=1)
        best_h_val[s] = dh_b[np.arange(m), best_h_idx[s]]
        best_t_idx[s] = np.argmin(dt_b, axis=1)
        best_t_val[s] = dt_b[np.arange(m), best_t_idx[s]]
    # per-instance nearest cell decomposes into nearest row and column tokens
    sums = best_h_val[:, :, None] + best_t_val[:, None, :]  # (S, m, m)
    winner = np.argmin(sums, axis=0)  # ties: lowest instance id
    for chunk in range(layout.num_chunks):
        lab = np.zeros((m, m), dtype=np.int64)
        for s, ex in enumerate(ctx.support):
            m_s = ex.instance.m
            mat = ex.label_seqs[ci].chunk(chunk).reshape(m_s, m_s)
            inherited = mat[best_h_idx[s][:, None], best_t_idx[s][None, :]]
            lab = np.where(winner == s, inherited, lab)
        out[layout.chunk_slice(chunk)] = lab.reshape(-1)
    return LabelSeq(layout, out)


def _predict_token_labels(episode, ci, params, scheme, provider, prototypes, counter):
    support = _sorted_support(episode)
    relation_id = episode.categories[ci]
    m = episode.query.m
    layout = scheme.layout_for(m)
    e_q = provider.embed(episode.query, relation_id)
    e_s = np.vstack([provider.embed(ex.instance, relation_id) for ex in support])
    h_q = encoding.token_heads(e_q, params, scheme.NUM_CHUNKS)
    h_s = encoding.token_heads(e_s, params, scheme.NUM_CHUNKS)
    if prototypes is None:
        hidden = params["w_c0"].shape[1]
        prototypes = PrototypeBank.zeros(layout.alphabet_sizes, hidden)
    out = np.zeros(layout.length, dtype=np.int64)
    for chunk in range(scheme.NUM_CHUNKS):
        d_c = sqdist(h_q[chunk], h_s[chunk], counter)
        labels_c = _support_chunk_labels(support, ci, chunk)
        tok_idx = np.argmin(d_c, axis=1)
        tok_val = d_c[np.arange(m), tok_idx]
        lab = labels_c[tok_idx]
        # labels absent from the support side compete via their prototypes
        absent = [
            l for l in range(layout.alphabet_sizes[chunk]) if not (labels_c == l).any()
        ]
        if absent:
            protos = prototypes.vectors[chunk][absent]
            diff = h_q[chunk][:, None, :] - protos[None, :, :]
            pd = np.einsum("plk,plk->pl", diff, diff)
            pick = np.argmin(pd, axis=1)
            pval = pd[np.arange(m), pick]
            better = pval < tok_val
            lab = np.where(better, np.asarray(absent)[pick], lab)
        out[layout.chunk_slice(chunk)] = lab
    return LabelSeq(layout, out)


def predict_triples(
    episode: Episode,
    params: dict[str, np.ndarray],
    scheme: Scheme,
    provider: encoding.EmbeddingProvider,
    prototypes: PrototypeBank | None = None,
    counter: OpCounter | None = None,
) -> frozenset[Triple]:
    """Predicted triple set for the episode query, over all its categories."""
    out: set[Triple] = set()
    for ci, relation_id in enumerate(episode.categories):
        labels = predict_labels(
            episode, ci, params, scheme, provider, prototypes, counter
        )
        out |= scheme.decode(labels, relation_id, episode.query.m)
    return frozenset(out)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


class AdamOptimizer:
    """Adam over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 2e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    """Trainable state of one model: heads, optional classifier, prototypes."""

    scheme_id: str
    params: dict[str, np.ndarray]
    classifier: dict[str, np.ndarray] | None
    prototypes: PrototypeBank | None
    optimizer: AdamOptimizer
    step: int = 0

    def trainable(self) -> dict[str, np.ndarray]:
        merged = dict(self.params)
        if self.classifier is not None:
            merged.update(self.classifier)
        return merged

    def reset_optimizer(self, lr: float, heads_only: bool = False) -> None:
        target = self.params if heads_only else self.trainable()
        self.optimizer = AdamOptimizer(target, lr=lr)


def init_train_state(
    scheme: Scheme,
    dim: int,
    hidden: int,
    rng: np.random.Generator,
    lr: float = 2e-5,
    with_classifier: bool = True,
) -> TrainState:
    if isinstance(scheme, MatrixScheme):
        params = encoding.init_pair_heads(dim, hidden, rng)
        classifier = (
            encoding.init_pair_classifier(hidden, scheme.NUM_CHUNKS, rng)
            if with_classifier
            else None
        )
        prototypes = None
    elif isinstance(scheme, TreeScheme):
        params = encoding.init_token_heads(dim, hidden, scheme.NUM_CHUNKS, rng)
        alphabets = scheme.layout_for(1).alphabet_sizes
        classifier = (
            encoding.init_token_classifier(hidden, alphabets, rng)
            if with_classifier
            else None
        )
        prototypes = PrototypeBank.zeros(alphabets, hidden)
    else:
        raise TypeError(f"unsupported scheme {scheme!r}")
    merged = dict(params)
    if classifier is not None:
        merged.update(classifier)
    state = TrainState(
        scheme_id=scheme.scheme_id,
        params=params,
        classifier=classifier,
        prototypes=prototypes,
        optimizer=AdamOptimizer(merged, lr=lr),
    )
    return state


# ---------------------------------------------------------------------------
# pretraining: per-position classification over the frozen embeddings
# ---------------------------------------------------------------------------


def _softmax_ce_backward(logits: np.ndarray, gold: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over leading axes; returns (loss, dL/dlogits)."""
    flat = logits.reshape(-1, logits.shape[-1])
    gold_flat = gold.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(flat.shape[0])
    loss = float(-(z[rows, gold_flat] - np.log(ez.sum(axis=1))).mean())
    g = p.copy()
    g[rows, gold_flat] -= 1.0
    g /= flat.shape[0]
    return loss, g.reshape(logits.shape)


def pretrain_step(
    state: TrainState,
    batch: Sequence[tuple[Instance, int]],
    provider: encoding.EmbeddingProvider,
    scheme: Scheme,
) -> float:
    """One supervised tagging step over (instance, relation) pairs.

    Every position of every chunk is classified against its gold label;
    heads and classifier update jointly, embeddings stay frozen.
    """
    if state.classifier is None:
        raise ValueError("pretraining needs a classifier; init with with_classifier=True")
    if not batch:
        raise ValueError("empty batch")
    merged = state.trainable()
    grads = {k: np.zeros_like(v) for k, v in merged.items()}
    total = 0.0
    for inst, relation_id in batch:
        gold_seq = scheme.encode(inst.m, inst.triples, relation_id)
        emb = provider.embed(inst, relation_id)
        if isinstance(scheme, MatrixScheme):
            total += _pair_pretrain_example(
                state, scheme, emb, gold_seq, inst.m, grads
            )
        elif isinstance(scheme, TreeScheme):
            total += _token_pretrain_example(state, scheme, emb, gold_seq, grads)
        else:
            raise TypeError(f"unsupported scheme {scheme!r}")
    scale = 1.0 / len(batch)
    for k in grads:
        grads[k] *= scale
    # optimizer updates in place, so params/classifier see the new values
    state.optimizer.step(merged, grads)
    state.step += 1
    return total * scale


def _pair_pretrain_example(state, scheme, emb, gold_seq, m, grads):
    params, classifier = state.params, state.classifier
    hidden = params["w_h"].shape[1]
    h_row, h_col = encoding.pair_heads(emb, params)
    g_hrow = np.zeros_like(h_row)
    g_hcol = np.zeros_like(h_col)
    loss = 0.0
    for chunk in range(scheme.NUM_CHUNKS):
        logits = encoding.pair_logits(h_row, h_col, classifier, chunk)
        gold = gold_seq.chunk(chunk).reshape(m, m)
        l_c, g_z = _softmax_ce_backward(logits, gold)
        loss += l_c / scheme.NUM_CHUNKS
        g_z /= scheme.NUM_CHUNKS
        w = classifier[f"cls_w{chunk}"]
        g_a = g_z.sum(axis=1)  # (m, 2) gradient on the row-side term
        g_c = g_z.sum(axis=0)
        grads[f"cls_w{chunk}"][:hidden] += h_row.T @ g_a
        grads[f"cls_w{chunk}"][hidden:] += h_col.T @ g_c
        grads[f"cls_b{chunk}"] += g_z.sum(axis=(0, 1))
        g_hrow += g_a @ w[:hidden].T
        g_hcol += g_c @ w[hidden:].T
    grads["w_h"] += emb.T @ g_hrow
    grads["b_h"] += g_hrow.sum(axis=0)
    grads["w_t"] += emb.T @ g_hcol
    grads["b_t"] += g_hcol.sum(axis=0)
    return loss


def _token_pretrain_example(state, scheme, emb, gold_seq, grads):
    params, classifier = state.params, state.classifier
    h_chunks = encoding.token_heads(emb, params, scheme.NUM_CHUNKS)
    loss = 0.0
    for chunk, h in enumerate(h_chunks):
        logits = h @ classifier[f"cls_w{chunk}"] + classifier[f"cls_b{chunk}"]
        gold = gold_seq.chunk(chunk)
        l_c, g_z = _softmax_ce_backward(logits, gold)
        loss += l_c / scheme.NUM_CHUNKS
        g_z /= scheme.NUM_CHUNKS
        grads[f"cls_w{chunk}"] += h.T @ g_z
        grads[f"cls_b{chunk}"] += g_z.sum(axis=0)
        g_h = g_z @ classifier[f"cls_w{chunk}"].T
        grads[f"w_c{chunk}"] += emb.T @ g_h
        grads[f"b_c{chunk}"] += g_h.sum(axis=0)
    return loss


def finetune_step(
    state: TrainState,
    episode: Episode,
    provider: encoding.EmbeddingProvider,
    scheme: Scheme,
    cfg: LossConfig = LossConfig(),
    gamma: float = 0.9,
) -> float:
    """One episodic metric step over the heads only.

    Token-level schemes refresh their prototype bank from the support set
    after the parameter update.
    """
    loss, grads = loss_and_grads(
        episode, state.params, scheme, provider, cfg, prototypes=state.prototypes
    )
    state.optimizer.step(state.params, grads)
    state.step += 1
    if isinstance(scheme, TreeScheme) and state.prototypes is not None:
        support = _sorted_support(episode)
        for ci, relation_id in enumerate(episode.categories):
            e_s = np.vstack(
                [provider.embed(ex.instance, relation_id) for ex in support]
            )
            h_s = encoding.token_heads(e_s, state.params, scheme.NUM_CHUNKS)
            for chunk in range(scheme.NUM_CHUNKS):
                labels_c = _support_chunk_labels(support, ci, chunk)
                prototype_update(
                    state.prototypes, chunk, h_s[chunk], labels_c, gamma
                )
    return loss


def pretrain_examples(
    instances: Sequence[Instance],
    n_relations: int,
    rng: np.random.Generator,
    negatives_per_instance: int = 1,
) -> list[tuple[Instance, int]]:
    """(instance, relation) pretraining pairs.

    Each instance is paired with every relation it expresses, plus a few
    absent relations whose gold tagging is all-zero; without those the
    classifier never learns to stay silent.
    """
    out: list[tuple[Instance, int]] = []
    for inst in instances:
        present = sorted(inst.relation_ids())
        out.extend((inst, rid) for rid in present)
        absent = [r for r in range(n_relations) if r not in inst.relation_ids()]
        if absent and negatives_per_instance > 0:
            take = min(negatives_per_instance, len(absent))
            picks = rng.choice(len(absent), size=take, replace=False)
            out.extend((inst, absent[int(p)]) for p in picks)
    return out


def run_pretrain(
    state: TrainState,
    examples: Sequence[tuple[Instance, int]],
    steps: int,
    batch_size: int,
    rng: np.random.Generator,
    provider: encoding.EmbeddingProvider,
    scheme: Scheme,
) -> list[float]:
    """Sampled mini-batch pretraining loop; returns the loss history."""
    if not examples:
        raise ValueError("no pretraining examples")
    history = []
    for _ in range(steps):
        idx = rng.integers(len(examples), size=min(batch_size, len(examples)))
        batch = [examples[int(i)] for i in idx]
        history.append(pretrain_step(state, batch, provider, scheme))
    return history


def run_finetune(
    state: TrainState,
    instances: Sequence[Instance],
    category_pool: Sequence[int],
    sampler_cfg: SamplerConfig,
    loss_cfg: LossConfig,
    steps: int,
    rng: np.random.Generator,
    provider: encoding.EmbeddingProvider,
    scheme: Scheme,
    gamma: float = 0.9,
) -> list[float]:
    """Episodic training loop; returns the loss history."""
    pool = np.asarray(sorted(category_pool))
    if pool.size < sampler_cfg.n_ways:
        raise ValueError("category pool smaller than n_ways")
    history = []
    for _ in range(steps):
        cats = rng.choice(pool, size=sampler_cfg.n_ways, replace=False)
        episode = sample_episode(instances, [int(c) for c in cats], sampler_cfg, rng, scheme)
        history.append(finetune_step(state, episode, provider, scheme, loss_cfg, gamma))
    return history
