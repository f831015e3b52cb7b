import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkge.data import DatasetBundle, IntervalFact, facts_to_array
from tkge.errors import DataError
from tkge.evaluation import (
    Metrics,
    build_filter_index,
    evaluate,
    rank_from_scores,
    rank_query,
)
from tkge.model import interval_score
from tkge.training import add_reciprocal

from conftest import make_bundle, randomized_params
from test_training import model_config_for


# ---------------------------------------------------------------------------
# filter index

def test_filter_index_point_fact():
    bundle = make_bundle(6, 2, 5, 8, seed=0)
    fi = build_filter_index(bundle)
    s, p, o, t, _ = bundle.train[0]
    assert o in fi.objects[(s, p, t)]
    assert s in fi.subjects[(p, o, t)]


def test_filter_index_expands_intervals():
    vocab = make_bundle(4, 2, 6, 4, seed=1).vocabulary
    arr = facts_to_array([IntervalFact(0, 0, 1, 2, 4)])
    empty = arr[:0]
    bundle = DatasetBundle(vocab, arr, empty, empty)
    fi = build_filter_index(bundle)
    for t in (2, 3, 4):
        assert fi.objects[(0, 0, t)] == {1}
    assert (0, 0, 1) not in fi.objects
    assert (0, 0, 5) not in fi.objects


def test_filter_index_collects_all_objects():
    vocab = make_bundle(4, 2, 6, 4, seed=1).vocabulary
    arr = facts_to_array([IntervalFact(0, 0, 1, 2, 2), IntervalFact(0, 0, 3, 2, 2)])
    bundle = DatasetBundle(vocab, arr, arr[:0], arr[:0])
    fi = build_filter_index(bundle)
    assert fi.objects[(0, 0, 2)] == {1, 3}


def test_filter_index_covers_all_splits():
    bundle = make_bundle(8, 2, 5, 20, seed=2, valid_size=5, test_size=5)
    fi = build_filter_index(bundle)
    for split in (bundle.train, bundle.valid, bundle.test):
        for s, p, o, t0, t1 in split.tolist():
            for t in range(t0, t1 + 1):
                assert o in fi.objects[(s, p, t)]


# ---------------------------------------------------------------------------
# rank computation

def test_rank_of_unique_minimum_is_one():
    scores = np.array([5.0, 1.0, 9.0, 3.0])
    assert rank_from_scores(scores, gold=1, excluded=np.zeros(4, dtype=bool)) == 1
    assert rank_from_scores(scores, gold=0, excluded=np.zeros(4, dtype=bool)) == 3


def test_exact_ties_do_not_worsen_rank():
    scores = np.full(6, 2.5)
    assert rank_from_scores(scores, gold=4, excluded=np.zeros(6, dtype=bool)) == 1


def test_excluded_candidates_do_not_count():
    scores = np.array([0.0, 1.0, 2.0, 3.0])
    excluded = np.array([True, False, False, False])
    assert rank_from_scores(scores, gold=2, excluded=excluded) == 2


@settings(max_examples=60)
@given(
    # quantized so the transforms stay strictly monotone in float arithmetic
    scores=st.lists(st.floats(-100, 100), min_size=2, max_size=30)
             .map(lambda xs: np.round(np.array(xs), 6)),
    data=st.data(),
)
def test_rank_invariant_under_monotone_transforms(scores, data):
    gold = data.draw(st.integers(0, len(scores) - 1))
    excluded = np.zeros(len(scores), dtype=bool)
    base = rank_from_scores(scores, gold, excluded.copy())
    for transform in (lambda x: 2.0 * x + 3.0, np.arctan, lambda x: x ** 3):
        assert rank_from_scores(transform(scores), gold, excluded.copy()) == base


# ---------------------------------------------------------------------------
# brute-force agreement on a small synthetic model

def _oracle_rank(params, bundle, fact, direction, filtered):
    """Loop-based re-ranking: substitute every entity, score with
    interval_score, filter by scanning the raw fact lists."""
    n_e = params.config.n_entities
    all_facts = np.concatenate([bundle.train, bundle.valid, bundle.test])

    def truth_set(step):
        rows = all_facts[(all_facts[:, 3] <= step) & (all_facts[:, 4] >= step)]
        if direction == "object":
            rows = rows[(rows[:, 0] == fact.s) & (rows[:, 1] == fact.p)]
            return set(rows[:, 2].tolist())
        rows = rows[(rows[:, 2] == fact.o) & (rows[:, 1] == fact.p)]
        return set(rows[:, 0].tolist())

    excluded = set.intersection(*(truth_set(t) for t in range(fact.t_start, fact.t_end + 1)))
    gold = fact.o if direction == "object" else fact.s
    excluded.discard(gold)
    if not filtered:
        excluded = set()

    def cand_score(c):
        sub = (IntervalFact(fact.s, fact.p, c, fact.t_start, fact.t_end)
               if direction == "object"
               else IntervalFact(c, fact.p, fact.o, fact.t_start, fact.t_end))
        return interval_score(params, sub)

    gold_score = cand_score(gold)
    better = sum(
        1 for c in range(n_e)
        if c not in excluded and cand_score(c) < gold_score
    )
    return 1 + better


@pytest.mark.parametrize("variant", ["full", "ts"])
def test_ranks_match_bruteforce(variant):
    bundle = make_bundle(6, 2, 4, 15, seed=5, reciprocal=False, interval_fraction=0.4,
                         valid_size=3, test_size=3)
    params = randomized_params(model_config_for(bundle, dim=4, variant=variant), 3)
    fi = build_filter_index(bundle)
    for row in bundle.test.tolist():
        fact = IntervalFact(*row)
        for direction in ("object", "subject"):
            for filtered in (True, False):
                got = rank_query(params, fact, direction, fi, filtered=filtered).rank
                want = _oracle_rank(params, bundle, fact, direction, filtered)
                assert got == want, (fact, direction, filtered)


def test_filtered_rank_never_exceeds_raw():
    bundle = make_bundle(8, 3, 5, 30, seed=6, reciprocal=False, interval_fraction=0.3)
    params = randomized_params(model_config_for(bundle, dim=4), 4)
    fi = build_filter_index(bundle)
    for row in bundle.train[:10].tolist():
        fact = IntervalFact(*row)
        for direction in ("object", "subject"):
            filtered = rank_query(params, fact, direction, fi, filtered=True).rank
            raw = rank_query(params, fact, direction, fi, filtered=False).rank
            assert filtered <= raw


def test_gold_entity_never_filtered():
    # two facts share (s, p, t); each gold must survive its own query
    bundle = make_bundle(6, 2, 4, 6, seed=7, reciprocal=False)
    vocab = bundle.vocabulary
    arr = facts_to_array([IntervalFact(0, 0, 1, 2, 2), IntervalFact(0, 0, 3, 2, 2)])
    shared = DatasetBundle(vocab, arr, arr[:0], arr[:0])
    params = randomized_params(model_config_for(shared, dim=4), 5)
    fi = build_filter_index(shared)
    for fact in (IntervalFact(0, 0, 1, 2, 2), IntervalFact(0, 0, 3, 2, 2)):
        result = rank_query(params, fact, "object", fi)
        assert result.rank >= 1
        # the other true object is filtered out of this query's candidates
        assert result.rank <= shared.vocabulary.n_entities - 1


def test_interval_query_filters_only_full_coverage():
    # candidate 3 is true only at one of two query steps: must NOT be filtered
    bundle = make_bundle(6, 2, 6, 6, seed=8, reciprocal=False)
    vocab = bundle.vocabulary
    arr = facts_to_array([
        IntervalFact(0, 0, 1, 2, 3),   # query fact, interval [2, 3]
        IntervalFact(0, 0, 3, 2, 2),   # true at step 2 only
        IntervalFact(0, 0, 4, 2, 3),   # true throughout
    ])
    shared = DatasetBundle(vocab, arr, arr[:0], arr[:0])
    params = randomized_params(model_config_for(shared, dim=4), 6)
    fi = build_filter_index(shared)
    from tkge.evaluation import _excluded_mask
    mask = _excluded_mask(IntervalFact(0, 0, 1, 2, 3), "object", fi, 6)
    assert not mask[3]   # partial coverage survives as a competitor
    assert mask[4]       # full coverage is filtered
    assert not mask[1]   # gold never filtered


# ---------------------------------------------------------------------------
# metrics

def test_evaluate_arithmetic_on_engineered_ranks():
    ranks = np.array([1, 2])
    mrr = float(np.mean(1.0 / ranks))
    assert mrr == 0.75


def test_all_rank_one_gives_perfect_metrics():
    # two entities whose difference matches the relation exactly: the gold
    # candidate scores 0 in both directions while the self-loop cannot
    import datetime
    from tkge.data import Timeline, Vocabulary
    from tkge.model import ModelConfig, init_params

    vocab = Vocabulary(["a", "b"], ["p"],
                       Timeline("day", 2, origin=datetime.date(2000, 1, 1)))
    arr = facts_to_array([IntervalFact(0, 0, 1, 0, 0)])
    bundle = DatasetBundle(vocab, arr, arr[:0], arr[:0])
    cfg = ModelConfig(n_entities=2, n_relations=1, n_steps=2, dim=2,
                      c_min=1e-3, c_max=10.0)
    params = init_params(cfg, 0)
    params.ent_base[0] = [1.0, 0.0]
    params.ent_base[1] = [0.0, 1.0]
    params.rel_base[0] = [1.0, -1.0]          # = e_a - e_b
    params.ent_var[:] = 0.5
    params.rel_var[0] = 1.0                   # = var_a + var_b
    metrics = evaluate(params, bundle.train, build_filter_index(bundle))
    assert metrics.mrr == 1.0
    assert metrics.hits_at == {1: 1.0, 3: 1.0, 10: 1.0}


def test_evaluate_pools_both_directions():
    bundle = make_bundle(6, 2, 4, 10, seed=9, reciprocal=False)
    params = randomized_params(model_config_for(bundle, dim=4), 7)
    fi = build_filter_index(bundle)
    collect = []
    metrics = evaluate(params, bundle.train, fi, collect=collect)
    assert metrics.n_queries == 2 * bundle.train.shape[0]
    assert len(collect) == metrics.n_queries
    ranks = np.array([r.rank for r in collect])
    assert metrics.mrr == pytest.approx(float(np.mean(1.0 / ranks)))
    assert metrics.hits_at[1] == pytest.approx(float(np.mean(ranks <= 1)))


def test_metrics_invariants():
    bundle = make_bundle(10, 2, 5, 25, seed=10, reciprocal=False)
    params = randomized_params(model_config_for(bundle, dim=4), 8)
    fi = build_filter_index(bundle)
    m = evaluate(params, bundle.train, fi)
    assert 0 < m.mrr <= 1
    assert m.hits_at[1] <= m.hits_at[3] <= m.hits_at[10]
    assert m.mrr >= m.hits_at[1]


def test_evaluate_empty_split_is_error():
    bundle = make_bundle(6, 2, 4, 10, seed=11, reciprocal=False)
    params = randomized_params(model_config_for(bundle, dim=4), 9)
    fi = build_filter_index(bundle)
    with pytest.raises(DataError, match="empty"):
        evaluate(params, bundle.train[:0], fi)


def test_threaded_evaluation_matches_serial():
    bundle = make_bundle(10, 3, 5, 40, seed=12, reciprocal=False)
    params = randomized_params(model_config_for(bundle, dim=4), 10)
    fi = build_filter_index(bundle)
    serial = evaluate(params, bundle.train, fi, threads=1)
    threaded = evaluate(params, bundle.train, fi, threads=4)
    assert serial == threaded


def test_metrics_report_format():
    m = Metrics(mrr=0.75, hits_at={1: 0.5, 3: 1.0, 10: 1.0}, n_queries=2)
    report = m.report()
    lines = report.strip().splitlines()
    assert lines[0] == "mrr\t0.750000"
    assert lines[1] == "hits@1\t0.500000"
    assert lines[-1] == "n_queries\t2"


def test_reciprocal_subject_query_equals_inverse_object_query():
    bundle = make_bundle(8, 3, 5, 30, seed=13, reciprocal=True)
    params = randomized_params(model_config_for(bundle, dim=4), 11)
    fi = build_filter_index(bundle)
    augmented = add_reciprocal(bundle)
    fi_aug = build_filter_index(augmented)
    n_r = bundle.vocabulary.n_relations
    for row in bundle.train[:8].tolist():
        fact = IntervalFact(*row)
        via_convention = rank_query(params, fact, "subject", fi, reciprocal=True).rank
        inverse_fact = IntervalFact(fact.o, fact.p + n_r, fact.s, fact.t_start, fact.t_end)
        via_augmented = rank_query(params, inverse_fact, "object", fi_aug).rank
        assert via_convention == via_augmented
