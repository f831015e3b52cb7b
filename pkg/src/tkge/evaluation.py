"""Link-prediction evaluation: time-wise filtered ranking, MRR and Hits@k.

For every evaluation fact two queries are ranked: predict the object given
(s, p, ?, t) and the subject given (?, p, o, t).  All entities are scored as
candidates (summing per-step scores over the fact's interval); candidates
whose substituted fact is itself true at the query's time point -- or at
every step of its interval -- are removed, except the gold entity.  The rank
counts only candidates with strictly better (lower) score, so exact ties do
not worsen the rank.

With reciprocal learning, subject queries are answered as object queries on
the inverse relation id (p + n_relations).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .data import DatasetBundle, IntervalFact, expand_split
from .errors import DataError
from .model import ModelParams, normalize_step, score_batch

Direction = Literal["subject", "object"]


@dataclass
class FilterIndex:
    """True-fact lookup at a single time step, over train + valid + test.

    objects[(s, p, t)] is the set of object ids true at step t, and
    subjects[(p, o, t)] the matching subject set; interval facts contribute
    every covered step.
    """

    objects: dict[tuple[int, int, int], set[int]]
    subjects: dict[tuple[int, int, int], set[int]]


def build_filter_index(bundle: DatasetBundle) -> FilterIndex:
    objects: dict[tuple[int, int, int], set[int]] = {}
    subjects: dict[tuple[int, int, int], set[int]] = {}
    for split in (bundle.train, bundle.valid, bundle.test):
        for s, p, o, t in expand_split(split).tolist():
            objects.setdefault((s, p, t), set()).add(o)
            subjects.setdefault((p, o, t), set()).add(s)
    return FilterIndex(objects=objects, subjects=subjects)


@dataclass
class QueryResult:
    direction: Direction
    fact: IntervalFact
    rank: int

    @property
    def reciprocal_rank(self) -> float:
        return 1.0 / self.rank


@dataclass
class Metrics:
    mrr: float
    hits_at: dict[int, float]
    n_queries: int

    def report(self) -> str:
        """TSV metric report, one ``name<TAB>value`` line per metric."""
        lines = [f"mrr\t{self.mrr:.6f}"]
        for k in sorted(self.hits_at):
            lines.append(f"hits@{k}\t{self.hits_at[k]:.6f}")
        lines.append(f"n_queries\t{self.n_queries}")
        return "\n".join(lines) + "\n"


def rank_from_scores(scores: np.ndarray, gold: int, excluded: np.ndarray) -> int:
    """Optimistic rank of the gold candidate: 1 + #survivors strictly better.

    ``excluded`` is a boolean mask of candidates removed by filtering; the
    gold entity is never excluded.  Depends only on the score ordering, so it
    is invariant under strictly increasing transforms of all scores.
    """
    keep = ~excluded
    keep[gold] = True
    return 1 + int(np.sum(scores[keep] < scores[gold]))


def _candidate_scores(params: ModelParams, fact: IntervalFact, direction: Direction,
                      reciprocal: bool) -> np.ndarray:
    """Interval score of every candidate entity substituted into the fact."""
    n_e = params.config.n_entities
    candidates = np.arange(n_e, dtype=np.int64)
    total = np.zeros(n_e)
    for step in range(fact.t_start, fact.t_end + 1):
        t = np.full(n_e, normalize_step(step, params.config.n_steps))
        p = np.full(n_e, fact.p, dtype=np.int64)
        if direction == "object":
            total += score_batch(params, np.full(n_e, fact.s, dtype=np.int64), p,
                                 candidates, t)
        elif reciprocal:
            # subject query answered as an object query on the inverse relation
            n_r = params.config.n_relations // 2
            total += score_batch(params, np.full(n_e, fact.o, dtype=np.int64),
                                 p + n_r, candidates, t)
        else:
            total += score_batch(params, candidates, p,
                                 np.full(n_e, fact.o, dtype=np.int64), t)
    return total


def _excluded_mask(fact: IntervalFact, direction: Direction,
                   filter_index: FilterIndex, n_entities: int) -> np.ndarray:
    """Candidates whose substituted fact is true at every step of the query."""
    survivors: set[int] | None = None
    for step in range(fact.t_start, fact.t_end + 1):
        if direction == "object":
            true_at_step = filter_index.objects.get((fact.s, fact.p, step), set())
        else:
            true_at_step = filter_index.subjects.get((fact.p, fact.o, step), set())
        survivors = true_at_step if survivors is None else survivors & true_at_step
        if not survivors:
            break
    gold = fact.o if direction == "object" else fact.s
    mask = np.zeros(n_entities, dtype=bool)
    if survivors:
        mask[list(survivors)] = True
    mask[gold] = False
    return mask


def rank_query(params: ModelParams, fact: IntervalFact, direction: Direction,
               filter_index: FilterIndex, *, reciprocal: bool = False,
               filtered: bool = True) -> QueryResult:
    """Rank the gold entity among all candidates for one query."""
    fact = IntervalFact(*(int(x) for x in fact))
    scores = _candidate_scores(params, fact, direction, reciprocal)
    if filtered:
        excluded = _excluded_mask(fact, direction, filter_index, scores.size)
    else:
        excluded = np.zeros(scores.size, dtype=bool)
    gold = fact.o if direction == "object" else fact.s
    return QueryResult(direction, fact, rank_from_scores(scores, gold, excluded))


def evaluate(params: ModelParams, facts: Sequence[IntervalFact] | np.ndarray,
             filter_index: FilterIndex, *, reciprocal: bool = False,
             filtered: bool = True, hits_ks: tuple[int, ...] = (1, 3, 10),
             threads: int = 1, collect: list[QueryResult] | None = None) -> Metrics:
    """Pooled MRR and Hits@k over both query directions of every fact."""
    facts = [IntervalFact(*(int(x) for x in row)) for row in np.asarray(facts).reshape(-1, 5)]
    if not facts:
        raise DataError("cannot evaluate an empty split")
    queries = [(fact, direction) for fact in facts for direction in ("object", "subject")]

    def run(q):
        fact, direction = q
        return rank_query(params, fact, direction, filter_index,
                          reciprocal=reciprocal, filtered=filtered)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, queries))
    else:
        results = [run(q) for q in queries]
    if collect is not None:
        collect.extend(results)
    ranks = np.array([r.rank for r in results])
    return Metrics(
        mrr=float(np.mean(1.0 / ranks)),
        hits_at={k: float(np.mean(ranks <= k)) for k in hits_ks},
        n_queries=len(ranks),
    )
