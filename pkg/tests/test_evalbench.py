import json

import numpy as np
import pytest

from fsre.encoding import HashEmbeddingProvider
from fsre.evalbench import (
    BenchScenario,
    bench_assumption,
    bench_kernels,
    closed_form_accel_ops,
    closed_form_exact_ops,
    evaluate,
    match_counts,
    micro_prf,
)
from fsre.fewshot import SamplerConfig, init_train_state
from fsre.synthetic import SynthConfig, make_catalog, make_corpus
from fsre.tagging import get_scheme
from fsre.types import Instance, RelationCatalog, Triple


def test_match_counts_is_strict():
    gold = frozenset({Triple((0, 2), (3, 4), 0), Triple((5, 6), (7, 8), 1)})
    pred = frozenset({Triple((0, 2), (3, 4), 0), Triple((0, 2), (3, 4), 1)})
    assert match_counts(pred, gold) == (1, 1, 1)
    assert match_counts(frozenset(), gold) == (0, 0, 2)
    assert match_counts(gold, gold) == (2, 0, 0)
    # same spans, different relation: no credit
    assert match_counts(frozenset({Triple((5, 6), (7, 8), 0)}), gold) == (0, 1, 2)


def test_micro_prf_handles_zero_denominators():
    assert micro_prf(0, 0, 0) == (0.0, 0.0, 0.0)
    assert micro_prf(0, 3, 0) == (0.0, 0.0, 0.0)
    assert micro_prf(0, 0, 3) == (0.0, 0.0, 0.0)
    p, r, f1 = micro_prf(2, 2, 6)
    assert (p, r) == (0.5, 0.25)
    assert f1 == pytest.approx(2 * 0.5 * 0.25 / 0.75)


def _synth_setup(scheme_id, n=60):
    catalog = make_catalog()
    corpus = make_corpus(SynthConfig(n_instances=n), np.random.default_rng(0))
    provider = HashEmbeddingProvider(catalog, dim=16, seed=0)
    scheme = get_scheme(scheme_id)
    state = init_train_state(
        scheme, 16, 8, np.random.default_rng(1), with_classifier=False
    )
    return catalog, corpus, provider, scheme, state


def test_evaluate_is_deterministic():
    catalog, corpus, provider, scheme, state = _synth_setup("tplinker")
    kwargs = dict(
        category_pool=list(range(8)),
        params=state.params,
        scheme=scheme,
        provider=provider,
        sampler_cfg=SamplerConfig(2, 1),
        n_episodes=12,
        seed=5,
    )
    a = evaluate(corpus, **kwargs)
    b = evaluate(corpus, **kwargs)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["n_episodes"] == 12 and len(a["episodes"]) == 12
    assert a["totals"]["tp"] + a["totals"]["fn"] == sum(
        ep["tp"] + ep["fn"] for ep in a["episodes"]
    )
    c = evaluate(corpus, **{**kwargs, "seed": 6})
    assert json.dumps(a, sort_keys=True) != json.dumps(c, sort_keys=True)


def test_evaluate_rejects_small_pool():
    catalog, corpus, provider, scheme, state = _synth_setup("tplinker", n=20)
    with pytest.raises(ValueError):
        evaluate(
            corpus, [0], state.params, scheme, provider,
            SamplerConfig(2, 1), 1, 0,
        )


@pytest.mark.parametrize("scheme_id", ["tplinker", "bitt"])
def test_evaluate_perfect_on_self_support(scheme_id):
    # every instance is the same sentence, so the nearest support positions
    # carry exactly the gold layout and inference must be perfect
    tokens = ("amber", "brook", "cliff", "delta", "ember", "flint")
    triples = [Triple((0, 2), (3, 4), 0)]
    corpus = [Instance(i, tokens, triples) for i in range(10)]
    catalog = RelationCatalog(["only"], [("only",)])
    provider = HashEmbeddingProvider(catalog, dim=12, seed=3)
    scheme = get_scheme(scheme_id)
    state = init_train_state(
        scheme, 12, 6, np.random.default_rng(2), with_classifier=False
    )
    result = evaluate(
        corpus, [0], state.params, scheme, provider,
        SamplerConfig(n_ways=1, k_shots=2), 8, 11,
        prototypes=state.prototypes,
    )
    assert result["micro"] == {"precision": 1.0, "recall": 1.0, "f1": 1.0}


# --------------------------------------------------------------------------
# benchmarks
# --------------------------------------------------------------------------


def test_closed_form_ops_worked_example():
    assert closed_form_exact_ops(4, (4,)) == 256
    assert closed_form_accel_ops(4, (4,), 2, 1) == 80


def test_bench_scenario_validation():
    with pytest.raises(ValueError):
        BenchScenario(4, (2,), 2, 5)


def test_bench_kernels_counters_match_closed_forms():
    scenarios = [
        BenchScenario(4, (4,), 2, 1, repeats=1),
        BenchScenario(6, (5, 3), 3, 4, repeats=1),
        BenchScenario(9, (4, 7, 6), 4, 2, repeats=1),
    ]
    out = bench_kernels(scenarios, seed=0, hidden=8)
    assert len(out["scenarios"]) == 3
    for sc, res in zip(scenarios, out["scenarios"]):
        ops = res["ops"]
        assert ops["exact"] == ops["exact_closed_form"] == closed_form_exact_ops(
            sc.m_query, sc.support_sizes
        )
        assert ops["accel"] == ops["accel_closed_form"] == closed_form_accel_ops(
            sc.m_query, sc.support_sizes, sc.top_e, sc.n_positive
        )
        assert ops["exact_match"] and ops["accel_match"]
        assert res["seconds"]["exact"] > 0 and res["seconds"]["accel"] > 0
    first = out["scenarios"][0]["ops"]
    assert (first["exact"], first["accel"]) == (256, 80)


def _assumption_setup():
    catalog = make_catalog()
    corpus = make_corpus(SynthConfig(n_instances=80), np.random.default_rng(7))
    provider = HashEmbeddingProvider(catalog, dim=16, seed=0)
    state = init_train_state(
        get_scheme("tplinker"), 16, 8, np.random.default_rng(3), with_classifier=False
    )
    return corpus, provider, state


def test_bench_assumption_scaled_shortlist_covers_everything():
    corpus, provider, state = _assumption_setup()
    out = bench_assumption(
        corpus, list(range(8)), state.params, provider,
        SamplerConfig(2, 1), n_episodes=6, seed=0, top_e=None,
    )
    assert out["n_cells"] > 0
    assert out["n_covered"] == out["n_cells"]
    assert out["violation_rate"] == 0.0
    assert out["premise_equality_max_diff"] <= 1e-9
    assert 0 < out["n_premise_held"] <= out["n_cells"]
    assert out["top_e_rule"] == "m_query_times_support"


def test_bench_assumption_fixed_shortlist_reports_rate():
    corpus, provider, state = _assumption_setup()
    out = bench_assumption(
        corpus, list(range(8)), state.params, provider,
        SamplerConfig(2, 1), n_episodes=4, seed=1, top_e=3,
    )
    assert out["top_e_rule"] == 3
    assert 0.0 <= out["violation_rate"] <= 1.0
    assert out["n_covered"] + out["n_cells"] * out["violation_rate"] == pytest.approx(
        out["n_cells"]
    )


def test_bench_assumption_avg_mode_skips_premise_accounting():
    corpus, provider, state = _assumption_setup()
    out = bench_assumption(
        corpus, list(range(8)), state.params, provider,
        SamplerConfig(2, 1), n_episodes=2, seed=2, top_e=4, neg_mode="avg",
    )
    assert out["neg_mode"] == "avg"
    assert out["n_premise_held"] == 0
    assert out["premise_equality_max_diff"] == 0.0
