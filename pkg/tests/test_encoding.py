import numpy as np
import pytest

from fsre.encoding import (
    HashEmbeddingProvider,
    hash_embed,
    init_pair_classifier,
    init_pair_heads,
    init_token_classifier,
    init_token_heads,
    pair_heads,
    pair_logits,
    token_heads,
    token_logits,
)
from fsre.types import Instance, RelationCatalog


def _catalog():
    return RelationCatalog(
        ["alpha", "beta"], [("first", "relation"), ("second", "relation")]
    )


def test_hash_embed_shape_norm_determinism():
    rows = hash_embed(["a", "b", "c"], ["rel"], dim=16, seed=3)
    again = hash_embed(["a", "b", "c"], ["rel"], dim=16, seed=3)
    assert rows.shape == (3, 16)
    assert np.array_equal(rows, again)
    assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-12)


def test_hash_embed_sensitivity():
    base = hash_embed(["a", "b", "c", "d"], ["rel"], dim=16)
    other_rel = hash_embed(["a", "b", "c", "d"], ["other"], dim=16)
    assert not np.allclose(base, other_rel)  # description conditions every row
    other_seed = hash_embed(["a", "b", "c", "d"], ["rel"], dim=16, seed=1)
    assert not np.allclose(base, other_seed)


def test_hash_embed_context_is_one_token_wide():
    base = hash_embed(["a", "b", "c", "d", "e"], ["rel"], dim=16)
    bumped = hash_embed(["a", "b", "X", "d", "e"], ["rel"], dim=16)
    assert not np.allclose(base[1], bumped[1])
    assert not np.allclose(base[2], bumped[2])
    assert not np.allclose(base[3], bumped[3])
    assert np.array_equal(base[0], bumped[0])
    assert np.array_equal(base[4], bumped[4])


def test_hash_embed_validation():
    with pytest.raises(ValueError):
        hash_embed([], ["rel"], dim=16)
    with pytest.raises(ValueError):
        hash_embed(["a"], [], dim=16)
    with pytest.raises(ValueError):
        hash_embed(["a"], ["rel"], dim=4)


def test_hash_provider_contexts_match_across_instances():
    cat = _catalog()
    provider = HashEmbeddingProvider(cat, dim=16, seed=0)
    a = provider.embed(Instance(1, ("x", "y", "z")), 0)
    b = provider.embed(Instance(2, ("x", "y", "z")), 0)
    assert np.array_equal(a, b)  # id plays no role in the encoding
    c = provider.embed(Instance(1, ("x", "y", "z")), 1)
    assert not np.allclose(a, c)
    assert a.flags.writeable is False


def test_head_shapes_and_logits():
    rng = np.random.default_rng(0)
    dim, hidden, m = 12, 8, 5
    pair = init_pair_heads(dim, hidden, rng)
    assert set(pair) == {"w_h", "b_h", "w_t", "b_t"}
    assert pair["w_h"].shape == (dim, hidden)
    emb = rng.standard_normal((m, dim))
    row, col = pair_heads(emb, pair)
    assert row.shape == col.shape == (m, hidden)
    assert np.allclose(row, emb @ pair["w_h"] + pair["b_h"])

    cls = init_pair_classifier(hidden, 1, rng)
    logits = pair_logits(row, col, cls, 0)
    assert logits.shape == (m, m, 2)
    # definition check: logit[i, j] scores the concatenated state [row_i; col_j]
    w, b = cls["cls_w0"], cls["cls_b0"]
    direct = np.empty((m, m, 2))
    for i in range(m):
        for j in range(m):
            direct[i, j] = np.concatenate([row[i], col[j]]) @ w + b
    assert np.allclose(logits, direct)


def test_token_head_shapes_and_logits():
    rng = np.random.default_rng(1)
    dim, hidden, m = 10, 6, 4
    sizes = (5, 4)
    heads = init_token_heads(dim, hidden, 2, rng)
    assert set(heads) == {"w_c0", "b_c0", "w_c1", "b_c1"}
    emb = rng.standard_normal((m, dim))
    states = token_heads(emb, heads, 2)
    assert len(states) == 2
    assert all(s.shape == (m, hidden) for s in states)
    assert np.allclose(states[1], emb @ heads["w_c1"] + heads["b_c1"])
    cls = init_token_classifier(hidden, sizes, rng)
    logits = token_logits(states, cls)
    assert [lg.shape for lg in logits] == [(m, 5), (m, 4)]
    assert np.allclose(logits[0], states[0] @ cls["cls_w0"] + cls["cls_b0"])
