import numpy as np
import pytest

from oracles import brute_pair_label_min, naive_sqdist
from fsre.metricspace import (
    MIN_SHORTLIST,
    NegativeFill,
    OpCounter,
    PrototypeBank,
    SupportColumns,
    TopCandidates,
    exact_pair_label_distances,
    fill_negative,
    fill_positive,
    pair_distance,
    prototype_update,
    sqdist,
    token_label_distances,
    top_candidates,
)


def _geometry(rng, m_q, sizes, hidden=5):
    q = rng.standard_normal((m_q, hidden))
    s = rng.standard_normal((sum(sizes), hidden))
    return sqdist(q, s), sqdist(rng.standard_normal((m_q, hidden)), s)


def _random_cells(rng, columns, k):
    cells = set()
    for _ in range(k):
        s = int(rng.integers(len(columns.sizes)))
        off, size = columns.offsets[s], columns.sizes[s]
        cells.add((off + int(rng.integers(size)), off + int(rng.integers(size))))
    return np.array(sorted(cells), dtype=np.int64).reshape(-1, 2)


def test_sqdist_matches_naive_and_counts():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 4))
    b = rng.standard_normal((5, 4))
    counter = OpCounter()
    d = sqdist(a, b, counter)
    assert np.allclose(d, naive_sqdist(a, b), atol=1e-12)
    assert (d >= 0).all()
    assert counter.token_dists == 30
    with pytest.raises(ValueError):
        sqdist(a, rng.standard_normal((5, 3)))


def test_support_columns_layout():
    cols = SupportColumns((3, 2, 4))
    assert cols.offsets == (0, 3, 5)
    assert cols.total == 9
    assert cols.block(1) == slice(3, 5)
    assert [cols.instance_of(c) for c in range(9)] == [0, 0, 0, 1, 1, 2, 2, 2, 2]
    with pytest.raises(IndexError):
        cols.instance_of(9)
    with pytest.raises(ValueError):
        SupportColumns(())
    with pytest.raises(ValueError):
        SupportColumns((3, 0))


def test_pair_distance_decomposition():
    rng = np.random.default_rng(1)
    cols = SupportColumns((3, 3))
    d_h, d_t = _geometry(rng, 4, (3, 3))
    counter = OpCounter()
    v = pair_distance(d_h, d_t, 1, 2, 4, 5, cols, counter)
    assert v == pytest.approx(d_h[1, 4] + d_t[2, 5], abs=0)
    assert counter.pair_sums == 1
    with pytest.raises(ValueError):
        pair_distance(d_h, d_t, 0, 0, 2, 4, cols)  # cell straddles instances


def test_fill_positive_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(25):
        sizes = tuple(int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 4))))
        cols = SupportColumns(sizes)
        m_q = int(rng.integers(2, 6))
        d_h, d_t = _geometry(rng, m_q, sizes)
        cells = _random_cells(rng, cols, int(rng.integers(1, 5)))
        counter = OpCounter()
        vals, idx = fill_positive(d_h, d_t, cells, counter)
        ref_vals, ref_cells = brute_pair_label_min(d_h, d_t, cols, cells, 1)
        assert np.allclose(vals, ref_vals, atol=1e-9)
        assert np.array_equal(cells[idx], ref_cells)
        assert counter.pair_sums == m_q * m_q * len(cells)
    assert fill_positive(d_h, d_t, np.empty((0, 2), dtype=np.int64)) == (None, None)


def test_fill_positive_tie_takes_first_cell():
    # two labeled cells at identical distance: index 0 must win
    d_h = np.array([[1.0, 1.0]])
    d_t = np.array([[2.0, 2.0]])
    cells = np.array([[0, 1], [1, 0]])
    vals, idx = fill_positive(d_h, d_t, cells)
    assert vals[0, 0] == 3.0
    assert idx[0, 0] == 0


def test_top_candidates_holds_true_minima():
    rng = np.random.default_rng(3)
    for _ in range(25):
        sizes = tuple(int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 4))))
        cols = SupportColumns(sizes)
        m_q = int(rng.integers(2, 5))
        d_h, d_t = _geometry(rng, m_q, sizes)
        top_e = int(rng.integers(2, max(2, max(sizes)) + 1))
        counter = OpCounter()
        top = top_candidates(d_h, d_t, cols, top_e, counter)
        assert counter.pair_sums == m_q * m_q * sum(min(top_e, s) ** 2 for s in sizes)
        for i in range(m_q):
            for j in range(m_q):
                brute = sorted(
                    d_h[i, ch] + d_t[j, ct]
                    for s, size in enumerate(cols.sizes)
                    for ch in range(cols.offsets[s], cols.offsets[s] + size)
                    for ct in range(cols.offsets[s], cols.offsets[s] + size)
                )
                got = top.values[i, j]
                assert np.all(np.diff(got) >= 0)
                assert np.allclose(got, brute[: top.width], atol=1e-9)
                # the recorded columns must reproduce the recorded values
                recon = d_h[i, top.cols_h[i, j]] + d_t[j, top.cols_t[i, j]]
                assert np.allclose(recon, got, atol=1e-12)


def test_top_candidates_clamps_and_warns():
    rng = np.random.default_rng(4)
    cols = SupportColumns((2,))
    d_h, d_t = _geometry(rng, 3, (2,))
    with pytest.warns(UserWarning, match="clamps"):
        top = top_candidates(d_h, d_t, cols, 4)
    assert top.width == 4  # 2x2 grid of the only instance
    with pytest.raises(ValueError):
        top_candidates(d_h, d_t, cols, MIN_SHORTLIST - 1)


def _top(values):
    vals = np.asarray(values, dtype=np.float64).reshape(1, 1, -1)
    cols = np.zeros_like(vals, dtype=np.int64)
    return TopCandidates(vals, cols, cols)


def test_fill_negative_min_removes_positive_match():
    top = _top([1.0, 4.0, 9.0])
    out = fill_negative(top, np.array([[1.0]]), mode="min")
    assert out.values[0, 0] == 4.0
    assert out.picked[0, 0] == 1
    # a match later in the list leaves the head entry as the minimum
    out = fill_negative(_top([1.0, 4.0, 9.0]), np.array([[4.0]]), mode="min")
    assert out.values[0, 0] == 1.0
    assert out.picked[0, 0] == 0
    # no value-equal entry: nothing is removed
    out = fill_negative(_top([1.0, 4.0, 9.0]), np.array([[2.0]]), mode="min")
    assert out.values[0, 0] == 1.0


def test_fill_negative_avg_weights():
    top = _top([1.0, 4.0, 9.0])
    out = fill_negative(top, np.array([[1.0]]), mode="avg")
    assert out.values[0, 0] == pytest.approx(6.5, abs=0)
    assert np.allclose(out.weights[0, 0], [0.0, 0.5, 0.5])
    out = fill_negative(_top([2.0, 6.0]), None, mode="avg")
    assert out.values[0, 0] == pytest.approx(4.0)
    assert np.allclose(out.weights[0, 0], [0.5, 0.5])


def test_fill_negative_empty_shortlist_goes_unavailable():
    width1 = _top([3.0])
    out = fill_negative(width1, np.array([[3.0]]), mode="min")
    assert not out.available[0, 0]
    assert np.isnan(out.values[0, 0])
    assert out.picked[0, 0] == -1
    out = fill_negative(width1, np.array([[3.0]]), mode="avg")
    assert not out.available[0, 0]
    assert np.all(out.weights[0, 0] == 0.0)
    with pytest.raises(ValueError):
        fill_negative(width1, None, mode="median")


def test_min_vs_avg_negative_fill_disagree_on_shared_positive_fill():
    # worked example: shortlist distances (1, 4, 9) with positive fill 1
    top = _top([1.0, 4.0, 9.0])
    d_p = np.array([[1.0]])
    low = fill_negative(top, d_p, mode="min")
    mean = fill_negative(top, d_p, mode="avg")
    assert low.values[0, 0] == 4.0
    assert mean.values[0, 0] == 6.5
    assert low.values[0, 0] != mean.values[0, 0]


def test_shortlist_can_miss_every_negative_when_positives_share_a_row():
    # Both labeled cells sit in row 0 of the lone support instance and are
    # the two nearest candidates, so a width-2 shortlist holds no negative
    # at all: the approximate fill returns a positive cell's distance while
    # the exact reduction finds the true negative minimum far away.
    d_h = np.array([[0.01, 100.0]])
    d_t = np.array([[1.0, 2.0]])
    cols = SupportColumns((2,))
    cells = np.array([[0, 0], [0, 1]])
    d_p, _ = fill_positive(d_h, d_t, cells)
    assert d_p[0, 0] == pytest.approx(1.01)
    top = top_candidates(d_h, d_t, cols, 2)
    assert np.allclose(top.values[0, 0], [1.01, 2.01])
    neg = fill_negative(top, d_p, mode="min")
    assert neg.values[0, 0] == pytest.approx(2.01)  # a positive in disguise
    exact = exact_pair_label_distances(d_h, d_t, cols, cells)
    assert exact[0][0][0, 0] == pytest.approx(101.0)


def test_exact_pair_label_distances_match_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(20):
        sizes = tuple(int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 4))))
        cols = SupportColumns(sizes)
        m_q = int(rng.integers(2, 5))
        d_h, d_t = _geometry(rng, m_q, sizes)
        cells = _random_cells(rng, cols, int(rng.integers(1, 4)))
        counter = OpCounter()
        out = exact_pair_label_distances(d_h, d_t, cols, cells, counter)
        assert counter.pair_sums == m_q * m_q * sum(s * s for s in sizes)
        for label in (0, 1):
            vals, cell_idx = out[label]
            ref_vals, ref_cells = brute_pair_label_min(d_h, d_t, cols, cells, label)
            assert np.allclose(vals, ref_vals, atol=1e-9)
            assert np.array_equal(cell_idx, ref_cells)


def test_exact_pair_label_distances_absent_positive():
    rng = np.random.default_rng(6)
    cols = SupportColumns((3,))
    d_h, d_t = _geometry(rng, 2, (3,))
    out = exact_pair_label_distances(d_h, d_t, cols, np.empty((0, 2), dtype=np.int64))
    assert out[1] == (None, None)
    assert out[0][0] is not None


def test_token_label_distances_support_and_prototype_paths():
    rng = np.random.default_rng(7)
    m_q, hidden = 4, 3
    q = rng.standard_normal((m_q, hidden))
    s = rng.standard_normal((5, hidden))
    d_c = sqdist(q, s)
    support_labels = np.array([0, 1, 0, 1, 1])
    protos = rng.standard_normal((3, hidden))
    counter = OpCounter()
    dist, src = token_label_distances(d_c, support_labels, 3, q, protos, counter)
    for label, cols in ((0, [0, 2]), (1, [1, 3, 4])):
        for i in range(m_q):
            j = min(cols, key=lambda c: d_c[i, c])
            assert dist[i, label] == pytest.approx(d_c[i, j], abs=0)
            assert src[i, label] == j
    # label 2 never occurs: prototype fallback
    assert np.all(src[:, 2] == -1)
    assert np.allclose(dist[:, 2], ((q - protos[2]) ** 2).sum(axis=1))
    assert counter.token_dists == m_q


def test_prototype_bank_and_update():
    bank = PrototypeBank.zeros((3, 2), hidden=4)
    assert [v.shape for v in bank.vectors] == [(3, 4), (2, 4)]
    states = np.arange(8, dtype=np.float64).reshape(2, 4)
    labels = np.array([1, 1])
    prototype_update(bank, 0, states, labels, gamma=0.5)
    assert np.allclose(bank.vectors[0][1], 0.5 * states.mean(axis=0))
    assert np.all(bank.vectors[0][0] == 0)  # absent label untouched
    snapshot = bank.copy()
    prototype_update(bank, 0, states, labels, gamma=0.5)
    assert not np.allclose(snapshot.vectors[0][1], bank.vectors[0][1])
    with pytest.raises(ValueError):
        prototype_update(bank, 0, states, labels, gamma=0.0)


def test_op_counter_merge():
    a = OpCounter(pair_sums=3, token_dists=5)
    a.merge(OpCounter(pair_sums=1, token_dists=2))
    assert a.as_dict() == {"pair_sums": 4, "token_dists": 7}


def test_negative_fill_dataclass_carries_mode():
    out = fill_negative(_top([1.0, 2.0]), None, mode="min")
    assert isinstance(out, NegativeFill)
    assert out.mode == "min"
