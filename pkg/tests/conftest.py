import datetime

import numpy as np
import pytest

from tkge.data import DatasetBundle, IntervalFact, Timeline, Vocabulary, facts_to_array
from tkge.model import ModelConfig, ModelParams, init_params


def make_bundle(n_entities, n_relations, n_steps, n_facts, seed, *,
                reciprocal=True, interval_fraction=0.0,
                valid_size=None, test_size=None) -> DatasetBundle:
    """Random synthetic bundle; valid/test default to slices of train."""
    rng = np.random.default_rng(seed)
    timeline = Timeline("day", n_steps, origin=datetime.date(2000, 1, 1))
    vocab = Vocabulary(
        [f"e{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(n_relations)],
        timeline,
        reciprocal=reciprocal,
    )
    seen, facts = set(), []
    while len(facts) < n_facts:
        s, o = int(rng.integers(n_entities)), int(rng.integers(n_entities))
        if s == o:
            continue
        p = int(rng.integers(n_relations))
        t0 = int(rng.integers(n_steps))
        if rng.random() < interval_fraction:
            t1 = int(rng.integers(t0, n_steps))
        else:
            t1 = t0
        key = (s, p, o, t0, t1)
        if key in seen:
            continue
        seen.add(key)
        facts.append(IntervalFact(s, p, o, t0, t1))
    arr = facts_to_array(facts)
    valid_size = min(valid_size if valid_size is not None else n_facts // 5, n_facts)
    test_size = min(test_size if test_size is not None else n_facts // 5, n_facts)
    return DatasetBundle(vocab, arr, arr[:valid_size].copy(),
                         arr[valid_size:valid_size + test_size].copy())


def randomized_params(config: ModelConfig, seed: int) -> ModelParams:
    """Init params, then give rates/amplitudes nonzero values so every
    gradient path is exercised (variances/frequencies stay in bounds)."""
    params = init_params(config, seed)
    rng = np.random.default_rng(seed + 1)
    for table in ("ent", "rel"):
        params.array(table, "alpha")[:] = rng.uniform(-1.0, 1.0,
                                                      params.array(table, "alpha").shape)
        params.array(table, "beta")[:] = rng.uniform(-1.0, 1.0,
                                                     params.array(table, "beta").shape)
    return params


@pytest.fixture
def memorization_bundle() -> DatasetBundle:
    """The 50-entity / 5-relation / 10-step / 500-point-fact learning check."""
    return make_bundle(50, 5, 10, 500, seed=11, valid_size=100, test_size=100)


def make_structured_bundle(seed=99) -> DatasetBundle:
    """A learnable world: 4 entity groups of 10; each relation links one group
    pair and holds only inside its own time window.  Unseen facts from the
    same rules fill valid/test, so held-out MRR measures generalization."""
    rng = np.random.default_rng(seed)
    group_size, n_steps = 10, 12
    rules = [(0, 1, (0, 5)), (1, 2, (4, 9)), (2, 3, (8, 11)), (3, 0, (2, 7))]
    n_e = 4 * group_size
    facts = set()
    while len(facts) < 1400:
        p = int(rng.integers(len(rules)))
        gs, go, (lo, hi) = rules[p]
        s = gs * group_size + int(rng.integers(group_size))
        o = go * group_size + int(rng.integers(group_size))
        facts.add((s, p, o, int(rng.integers(lo, hi + 1))))
    rows = [IntervalFact(s, p, o, t, t) for s, p, o, t in sorted(facts)]
    rng.shuffle(rows)
    arr = facts_to_array(rows)
    timeline = Timeline("day", n_steps, origin=datetime.date(2000, 1, 1))
    vocab = Vocabulary([f"e{i}" for i in range(n_e)],
                       [f"r{i}" for i in range(len(rules))],
                       timeline, reciprocal=True)
    return DatasetBundle(vocab, arr[:1000], arr[1000:1200], arr[1200:1400])
