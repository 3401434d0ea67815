"""UCT Monte Carlo Tree Search over partial rule bodies.

States are partial conjunctions grown one predicate per action from the
empty root. Search runs the classic four phases (select by UCT, expand a
single random untried child, random rollout to a terminal state,
backpropagate the terminal reward). A state is terminal when it reaches the
maximum body length or when its terminal-metric value meets the threshold;
every threshold-meeting terminal encountered, in the tree or during a
rollout, is re-verified and harvested.

One tree has a single writer; the matrix is shared read-only. Root-parallel
search runs workers with seeds derived from (seed, worker index) and merges
their harvests, which by construction equals the union of the individual
runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import BodyState, PredicateMatrix
from .rules import (
    REWARD_METRICS,
    Rule,
    ScoredRule,
    metrics_from_columns,
    reward_from_metrics,
    sort_scored,
)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of one search run.

    ``terminal_metric`` defaults to the reward metric; task profiles that
    reward F1 or precision-plus-recall still terminate on precision.
    """

    total_rollouts: int = 500
    exploration_c: float = math.sqrt(2)
    max_body_predicates: int = 5
    terminal_reward_threshold: float = 0.9
    reward_metric: str = "precision"
    terminal_metric: str | None = None
    min_support_to_expand: int = 5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.total_rollouts < 1:
            raise ValueError("total_rollouts must be positive")
        if self.exploration_c < 0:
            raise ValueError("exploration_c must be non-negative")
        if self.max_body_predicates < 1:
            raise ValueError("max_body_predicates must be >= 1")
        if self.reward_metric not in REWARD_METRICS:
            raise ValueError(f"unknown reward metric {self.reward_metric!r}")
        if self.terminal_metric is not None and self.terminal_metric not in REWARD_METRICS:
            raise ValueError(f"unknown terminal metric {self.terminal_metric!r}")
        hi = 2.0 if self.effective_terminal_metric == "precision_plus_recall" else 1.0
        if not 0.0 <= self.terminal_reward_threshold <= hi:
            raise ValueError("terminal_reward_threshold outside the reward range")
        if self.min_support_to_expand < 0:
            raise ValueError("min_support_to_expand must be >= 0")

    @property
    def effective_terminal_metric(self) -> str:
        return self.terminal_metric or self.reward_metric


@dataclass(frozen=True)
class SearchProblem:
    """A matrix plus the target column and candidate ids a search runs over."""

    matrix: PredicateMatrix
    target: np.ndarray
    allowed_ids: tuple[int, ...]
    target_name: str = "label"

    @property
    def feature_of(self) -> tuple[str, ...]:
        return self.matrix.feature_of


def make_problem(
    matrix: PredicateMatrix,
    target: np.ndarray | None = None,
    allowed_ids: Sequence[int] | None = None,
    target_name: str = "label",
) -> SearchProblem:
    tgt = matrix.target if target is None else np.asarray(target, dtype=bool)
    if len(tgt) != matrix.n_samples:
        raise ValueError("target column length must equal sample count")
    ids = tuple(allowed_ids) if allowed_ids is not None else tuple(range(matrix.n_predicates))
    return SearchProblem(matrix, tgt, ids, target_name)


@dataclass
class SearchNode:
    """One tree node: a partial rule plus its bandit statistics."""

    body: BodyState
    parent: "SearchNode | None" = None
    children: dict[int, "SearchNode"] = field(default_factory=dict)
    untried: list[int] = field(default_factory=list)
    visits: int = 0
    total_reward: float = 0.0
    terminal: bool = False

    @property
    def state(self) -> tuple[int, ...]:
        return self.body.ids

    @property
    def coverage_count(self) -> int:
        return self.body.coverage

    @property
    def mean_reward(self) -> float:
        return self.total_reward / self.visits if self.visits else 0.0


@dataclass(frozen=True)
class SearchReport:
    """Harvest and accounting of one search run.

    Wall-clock duration is reported for manifests but never serialised into
    report files, which must be reproducible byte for byte.
    """

    harvested: tuple[ScoredRule, ...]
    rollouts: int
    tree_size: int
    terminal_counts: dict
    duration_seconds: float
    target_name: str = "label"
    diagnostics: tuple[str, ...] = ()


def uct_score(mean_reward: float, visits: int, parent_visits: int, c: float) -> float:
    """Upper confidence bound for trees; unvisited nodes explore first."""
    if parent_visits < 1:
        raise ValueError("parent_visits must be >= 1")
    if visits == 0:
        return math.inf
    return mean_reward + c * math.sqrt(2.0 * math.log(parent_visits) / visits)


def _scores(col: np.ndarray, problem: SearchProblem, config: SearchConfig) -> tuple[float, float]:
    """(terminal metric value, reward) of a body column."""
    m = metrics_from_columns(col, problem.target)
    return (
        reward_from_metrics(m, config.effective_terminal_metric),
        reward_from_metrics(m, config.reward_metric),
    )


def _is_terminal(state_len: int, terminal_value: float, config: SearchConfig) -> bool:
    if state_len >= config.max_body_predicates:
        return True
    return state_len >= 1 and terminal_value >= config.terminal_reward_threshold


def _candidate_pool(state: BodyState, problem: SearchProblem) -> list[int]:
    # Ids not in the state; predicates over an already-constrained source
    # feature are excluded on tabular data (patterns extend instead).
    used = set(state.ids)
    if problem.matrix.is_sequence:
        return [pid for pid in problem.allowed_ids if pid not in used]
    features = problem.feature_of
    used_features = {features[i] for i in state.ids}
    return [
        pid
        for pid in problem.allowed_ids
        if pid not in used and features[pid] not in used_features
    ]


def legal_actions(
    node: SearchNode, problem: SearchProblem, config: SearchConfig
) -> list[int]:
    """Candidate predicate ids whose addition keeps enough support."""
    if len(node.state) >= config.max_body_predicates:
        return []
    pool = _candidate_pool(node.body, problem)
    if not pool:
        return []
    counts = problem.matrix.support_counts(node.body, pool)
    return [pid for pid, c in zip(pool, counts) if c >= config.min_support_to_expand]


def select(tree: SearchNode, problem: SearchProblem, config: SearchConfig) -> list[SearchNode]:
    """Descend by UCT while fully expanded and non-terminal; ties go to the
    lowest predicate id."""
    path = [tree]
    node = tree
    while True:
        if node.terminal or node.untried or not node.children:
            return path
        best_pid = None
        best_score = -math.inf
        for pid in sorted(node.children):
            child = node.children[pid]
            score = uct_score(
                child.mean_reward, child.visits, node.visits, config.exploration_c
            )
            if score > best_score:
                best_score = score
                best_pid = pid
        node = node.children[best_pid]
        path.append(node)


def expand(
    node: SearchNode,
    problem: SearchProblem,
    config: SearchConfig,
    rng: np.random.Generator,
) -> SearchNode:
    """Create one child from a uniformly random untried action."""
    if not node.untried:
        raise ValueError("expand called on a node without untried actions")
    idx = int(rng.integers(len(node.untried)))
    pid = node.untried.pop(idx)
    body = problem.matrix.extend(node.body, pid)
    child = SearchNode(body=body, parent=node)
    t_val, _ = _scores(body.column, problem, config)
    child.terminal = _is_terminal(len(body.ids), t_val, config)
    if not child.terminal:
        child.untried = legal_actions(child, problem, config)
    node.children[pid] = child
    return child


def _rollout_step(
    state: BodyState,
    problem: SearchProblem,
    config: SearchConfig,
    rng: np.random.Generator,
) -> BodyState | None:
    """One uniformly random legal extension, or None at a dead end.

    Uniformity over the legal set is preserved by rejection sampling from
    the unconstrained pool: draws that fall below the support floor are
    discarded from the pool and redrawn.
    """
    pool = _candidate_pool(state, problem)
    while pool:
        idx = int(rng.integers(len(pool)))
        pid = pool.pop(idx)
        nxt = problem.matrix.extend(state, pid)
        if nxt.coverage >= config.min_support_to_expand:
            return nxt
    return None


def simulate(
    node: SearchNode,
    problem: SearchProblem,
    config: SearchConfig,
    rng: np.random.Generator,
    harvest: "_Harvest | None" = None,
) -> float:
    """Random rollout from the node's state to a terminal state.

    Returns the reward of the terminal state reached; a node that is itself
    terminal returns its own reward.
    """
    state = node.body
    while True:
        t_val, rew = _scores(state.column, problem, config)
        if _is_terminal(len(state.ids), t_val, config):
            if harvest is not None:
                harvest.record(state, t_val, rew, problem, config)
            return rew
        nxt = _rollout_step(state, problem, config, rng)
        if nxt is None:
            if harvest is not None:
                harvest.exhausted += 1
            return rew
        state = nxt


def backpropagate(path: Sequence[SearchNode], reward: float) -> None:
    """Credit the simulated terminal reward to every node on the path."""
    for node in path:
        node.visits += 1
        node.total_reward += reward


class _Harvest:
    """Collects qualifying terminal states, deduplicated by canonical key."""

    def __init__(self) -> None:
        self.rules: dict[str, ScoredRule] = {}
        self.threshold_hits = 0
        self.max_length_hits = 0
        self.exhausted = 0

    def record(
        self,
        state: BodyState,
        terminal_value: float,
        reward: float,
        problem: SearchProblem,
        config: SearchConfig,
    ) -> None:
        if terminal_value >= config.terminal_reward_threshold and state.ids:
            self.threshold_hits += 1
        else:
            self.max_length_hits += 1
            return
        rule = Rule(
            body=state.ids,
            target=problem.target_name,
            provenance="searched",
            ordered=problem.matrix.is_sequence,
        )
        key = f"{rule.target}|{','.join(map(str, state.ids if rule.ordered else sorted(state.ids)))}"
        if key in self.rules:
            return
        # Re-verify from scratch before storing: the incremental column must
        # reproduce, and the recorded terminal condition must hold exactly.
        col = problem.matrix.body_column(rule.body)
        metrics = metrics_from_columns(col, problem.target)
        t_val = reward_from_metrics(metrics, config.effective_terminal_metric)
        if t_val < config.terminal_reward_threshold:
            raise AssertionError("harvested rule failed exact re-verification")
        self.rules[key] = ScoredRule(
            rule=rule,
            metrics=metrics,
            reward=reward_from_metrics(metrics, config.reward_metric),
            terminal_reason="threshold",
        )


def search_tree(
    matrix: PredicateMatrix,
    config: SearchConfig,
    target: np.ndarray | None = None,
    allowed_ids: Sequence[int] | None = None,
    target_name: str = "label",
) -> tuple[SearchReport, SearchNode]:
    """Like :func:`search`, but also hands back the root for inspection."""
    started = time.perf_counter()
    problem = make_problem(matrix, target, allowed_ids, target_name)
    rng = np.random.default_rng(config.rng_seed)
    harvest = _Harvest()

    root = SearchNode(body=matrix.root_state())
    root.untried = legal_actions(root, problem, config)
    if not root.untried:
        report = SearchReport(
            harvested=(),
            rollouts=0,
            tree_size=1,
            terminal_counts={"threshold": 0, "max_length": 0, "exhausted": 0},
            duration_seconds=time.perf_counter() - started,
            target_name=target_name,
            diagnostics=(
                "no legal root actions: every candidate falls below the support floor",
            ),
        )
        return report, root

    tree_size = 1
    for _ in range(config.total_rollouts):
        path = select(root, problem, config)
        leaf = path[-1]
        if not leaf.terminal and leaf.untried:
            child = expand(leaf, problem, config, rng)
            tree_size += 1
            path.append(child)
        # Terminal states seen at expansion and during rollouts both harvest;
        # simulate() performs the terminal check for the path tip itself.
        reward = simulate(path[-1], problem, config, rng, harvest)
        backpropagate(path, reward)

    report = SearchReport(
        harvested=tuple(sort_scored(harvest.rules.values())),
        rollouts=config.total_rollouts,
        tree_size=tree_size,
        terminal_counts={
            "threshold": harvest.threshold_hits,
            "max_length": harvest.max_length_hits,
            "exhausted": harvest.exhausted,
        },
        duration_seconds=time.perf_counter() - started,
        target_name=target_name,
    )
    return report, root


def search(
    matrix: PredicateMatrix,
    config: SearchConfig,
    target: np.ndarray | None = None,
    allowed_ids: Sequence[int] | None = None,
    target_name: str = "label",
) -> SearchReport:
    """Run ``total_rollouts`` select/expand/simulate/backpropagate rounds."""
    report, _ = search_tree(matrix, config, target, allowed_ids, target_name)
    return report


def derive_worker_seed(seed: int, worker: int) -> int:
    from .config import derive_seed

    return derive_seed(seed, "worker", worker)


def search_root_parallel(
    matrix: PredicateMatrix,
    config: SearchConfig,
    workers: int,
    target: np.ndarray | None = None,
    allowed_ids: Sequence[int] | None = None,
    target_name: str = "label",
) -> SearchReport:
    """Root-parallel contract: k independent trees, harvests merged.

    Workers run deterministically in sequence; the merged result equals the
    union of the k independent runs by construction.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    merged: dict[str, ScoredRule] = {}
    counts = {"threshold": 0, "max_length": 0, "exhausted": 0}
    rollouts = 0
    tree_size = 0
    duration = 0.0
    diagnostics: list[str] = []
    for w in range(workers):
        wconfig = replace(config, rng_seed=derive_worker_seed(config.rng_seed, w))
        rep = search(matrix, wconfig, target, allowed_ids, target_name)
        for sr in rep.harvested:
            merged.setdefault(sr.key, sr)
        for k in counts:
            counts[k] += rep.terminal_counts.get(k, 0)
        rollouts += rep.rollouts
        tree_size += rep.tree_size
        duration += rep.duration_seconds
        diagnostics.extend(rep.diagnostics)
    return SearchReport(
        harvested=tuple(sort_scored(merged.values())),
        rollouts=rollouts,
        tree_size=tree_size,
        terminal_counts=counts,
        duration_seconds=duration,
        target_name=target_name,
        diagnostics=tuple(diagnostics),
    )
