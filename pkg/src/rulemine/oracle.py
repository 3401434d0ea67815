"""Exhaustive rule enumeration: brute-force ground truth for the search.

The oracle evaluates every legal body up to a length bound with no pruning
cleverness beyond same-feature exclusion, so it stays obviously correct.
Desk-scale only; an evaluation budget guards against combinatorial blowups.
Enumeration is embarrassingly parallel in principle; results are ordered
deterministically by canonical-key sort either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Iterable, Sequence

import numpy as np

from .dataset import PredicateMatrix
from .mcts import SearchProblem, make_problem
from .rules import (
    Rule,
    ScoredRule,
    dominance_prune,
    metrics_from_columns,
    reward_from_metrics,
)


class BudgetExceededError(ValueError):
    """Raised when the combination count exceeds the configured budget."""


@dataclass(frozen=True)
class OracleReport:
    """Every enumerated rule plus the qualifying subset."""

    all_rules: tuple[ScoredRule, ...]
    qualifying: tuple[ScoredRule, ...]
    enumeration_count: int


def _upper_bound(n_predicates: int, max_len: int, ordered: bool) -> int:
    total = 0
    for k in range(1, max_len + 1):
        if ordered:
            total += math.perm(n_predicates, k)
        else:
            total += math.comb(n_predicates, k)
    return total


def _legal_bodies(
    problem: SearchProblem, max_len: int
) -> Iterable[tuple[int, ...]]:
    ids = problem.allowed_ids
    ordered = problem.matrix.is_sequence
    features = problem.feature_of
    for k in range(1, max_len + 1):
        combos = permutations(ids, k) if ordered else combinations(ids, k)
        for body in combos:
            if not ordered and len({features[i] for i in body}) != k:
                continue
            yield body


def enumerate_rules(
    matrix: PredicateMatrix,
    max_len: int,
    min_coverage: int,
    threshold: float,
    target: np.ndarray | None = None,
    allowed_ids: Sequence[int] | None = None,
    metric: str = "precision",
    terminal_metric: str | None = None,
    target_name: str = "label",
    budget: int = 1_000_000,
) -> OracleReport:
    """Score every legal body of size 1..max_len.

    The qualifying subset keeps rules whose terminal-metric value meets the
    threshold with coverage at or above the floor, sorted by reward desc,
    body size asc, canonical key.
    """
    problem = make_problem(matrix, target, allowed_ids, target_name)
    ordered = matrix.is_sequence
    bound = _upper_bound(len(problem.allowed_ids), max_len, ordered)
    if bound > budget:
        raise BudgetExceededError(
            f"enumeration bound {bound} exceeds the budget of {budget} bodies"
        )
    t_metric = terminal_metric or metric

    all_rules: list[ScoredRule] = []
    for body in _legal_bodies(problem, max_len):
        col = matrix.body_column(body)
        metrics = metrics_from_columns(col, problem.target)
        all_rules.append(
            ScoredRule(
                rule=Rule(body, target_name, provenance="oracle", ordered=ordered),
                metrics=metrics,
                reward=reward_from_metrics(metrics, metric),
            )
        )

    qualifying = [
        sr
        for sr in all_rules
        if reward_from_metrics(sr.metrics, t_metric) >= threshold
        and sr.metrics.coverage_count >= min_coverage
    ]
    qualifying.sort(key=lambda sr: (-sr.reward, len(sr.rule.body), sr.key))
    return OracleReport(tuple(all_rules), tuple(qualifying), len(all_rules))


def search_recall(
    harvest: Sequence[ScoredRule], oracle_qualifying: Sequence[ScoredRule]
) -> float:
    """Share of the oracle's qualifying rules the search found.

    Both sets are dominance-pruned identically first, so missing a rule that
    a found generalisation dominates costs nothing. An empty qualifying set
    counts as full recall.
    """
    pruned_q = {sr.key for sr in dominance_prune(oracle_qualifying)}
    if not pruned_q:
        return 1.0
    pruned_h = {sr.key for sr in dominance_prune(harvest)}
    return len(pruned_h & pruned_q) / len(pruned_q)
