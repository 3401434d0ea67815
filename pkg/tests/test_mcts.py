import math

import numpy as np
import pytest

from rulemine.config import derive_seed
from rulemine.dataset import (
    Feature,
    FeatureSchema,
    PredicateSpaceBuilder,
    Sample,
    TabularDataset,
    build_matrix,
)
from rulemine.mcts import (
    SearchConfig,
    SearchNode,
    backpropagate,
    expand,
    legal_actions,
    make_problem,
    search,
    search_root_parallel,
    search_tree,
    select,
    simulate,
    uct_score,
)
from rulemine.rules import metrics_from_columns, reward_from_metrics

from conftest import boolean_matrix, planted_matrix


def default_config(**kw):
    base = dict(
        total_rollouts=200,
        max_body_predicates=3,
        terminal_reward_threshold=0.9,
        reward_metric="precision",
        min_support_to_expand=5,
        rng_seed=0,
    )
    base.update(kw)
    return SearchConfig(**base)


def report_core(report):
    return (report.harvested, report.tree_size, report.terminal_counts, report.rollouts)


class TestUctScore:
    def test_log_one_kills_exploration(self):
        assert uct_score(0.5, 1, 1, 1.0) == 0.5

    def test_unvisited_first(self):
        assert uct_score(0.0, 0, 10, 1.0) == math.inf

    def test_frozen_regression_constant(self):
        # Independent scalar evaluation of X + C*sqrt(2 ln N / n).
        expected = 0.5 + 1.41421 * math.sqrt(2.0 * math.log(10) / 3)
        assert expected == pytest.approx(2.2521695095640, abs=1e-12)
        assert uct_score(0.5, 3, 10, 1.41421) == pytest.approx(expected, abs=0)

    def test_parent_visits_precondition(self):
        with pytest.raises(ValueError):
            uct_score(0.5, 1, 0, 1.0)


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SearchConfig(total_rollouts=0)
        with pytest.raises(ValueError):
            SearchConfig(max_body_predicates=0)
        with pytest.raises(ValueError):
            SearchConfig(reward_metric="accuracy")
        with pytest.raises(ValueError):
            SearchConfig(terminal_reward_threshold=1.5)

    def test_precision_plus_recall_range_is_two(self):
        SearchConfig(reward_metric="precision_plus_recall", terminal_reward_threshold=1.5)

    def test_terminal_metric_defaults_to_reward_metric(self):
        assert SearchConfig(reward_metric="f1").effective_terminal_metric == "f1"
        c = SearchConfig(reward_metric="f1", terminal_metric="precision")
        assert c.effective_terminal_metric == "precision"


class TestLegalActions:
    def test_same_feature_exclusion(self):
        values = [1, 2, 3, 10, 11, 12]
        labels = [False, False, False, True, True, True]
        feats = (Feature("x", "continuous", (1, 12)),)
        ds = TabularDataset(
            FeatureSchema(feats),
            tuple(Sample({"x": float(v)}, l) for v, l in zip(values, labels)),
        )
        preds = PredicateSpaceBuilder(ds, n_bins=2).build()
        m = build_matrix(ds, preds)
        problem = make_problem(m)
        config = default_config(min_support_to_expand=1)
        root = SearchNode(body=m.root_state())
        node = SearchNode(body=m.extend(root.body, 0), parent=root)
        assert legal_actions(node, problem, config) == []

    def test_root_respects_support_floor(self, tiny_matrix):
        problem = make_problem(tiny_matrix)
        root = SearchNode(body=tiny_matrix.root_state())
        config = default_config(min_support_to_expand=3)
        assert legal_actions(root, problem, config) == [0, 1, 2]
        config = default_config(min_support_to_expand=4)
        assert legal_actions(root, problem, config) == []

    def test_max_length_is_terminal(self, tiny_matrix):
        problem = make_problem(tiny_matrix)
        config = default_config(max_body_predicates=1, min_support_to_expand=0)
        node = SearchNode(body=tiny_matrix.extend(tiny_matrix.root_state(), 0))
        assert legal_actions(node, problem, config) == []


class TestSelectExpandBackprop:
    def _expandable_root(self, m, config):
        problem = make_problem(m)
        root = SearchNode(body=m.root_state())
        root.untried = legal_actions(root, problem, config)
        return root, problem

    def test_root_with_untried_is_the_whole_path(self, tiny_matrix):
        config = default_config(min_support_to_expand=0)
        root, problem = self._expandable_root(tiny_matrix, config)
        assert select(root, problem, config) == [root]

    def test_descends_to_higher_mean(self, tiny_matrix):
        config = default_config(min_support_to_expand=0)
        root, problem = self._expandable_root(tiny_matrix, config)
        rng = np.random.default_rng(0)
        while root.untried:
            expand(root, problem, config, rng)
        kids = list(root.children.values())
        for i, child in enumerate(kids):
            child.visits = 5
            child.total_reward = 4.5 if i == 0 else 0.5
            child.untried = []
            child.terminal = True
        root.visits = len(kids) * 5
        path = select(root, problem, config)
        assert path[-1] is kids[0]

    def test_uct_tie_breaks_to_lowest_predicate_id(self, tiny_matrix):
        config = default_config(min_support_to_expand=0, exploration_c=1.0)
        root, problem = self._expandable_root(tiny_matrix, config)
        rng = np.random.default_rng(0)
        while root.untried:
            expand(root, problem, config, rng)
        for child in root.children.values():
            child.visits = 2
            child.total_reward = 1.0
            child.untried = []
            child.terminal = True
        root.visits = 6
        path = select(root, problem, config)
        assert path[-1] is root.children[min(root.children)]

    def test_expand_grows_state_by_one(self):
        # Worked example: a node constraining age expands with income.
        feats = (
            Feature("age", "continuous", (20, 60)),
            Feature("income", "continuous", (10_000, 90_000)),
        )
        rows = [(25, 20_000, False), (35, 60_000, True), (45, 55_000, True),
                (52, 80_000, True), (23, 15_000, False), (38, 52_000, True)]
        ds = TabularDataset(
            FeatureSchema(feats),
            tuple(Sample({"age": a, "income": i}, l) for a, i, l in rows),
        )
        preds = PredicateSpaceBuilder(ds, n_bins=2).build()
        m = build_matrix(ds, preds)
        problem = make_problem(m)
        config = default_config(min_support_to_expand=1)
        age_hi = next(p.id for p in m.predicates if p.feature == "age" and p.hi_closed)
        income_hi = next(
            p.id for p in m.predicates if p.feature == "income" and p.hi_closed
        )
        node = SearchNode(body=m.extend(m.root_state(), age_hi))
        node.untried = [income_hi]
        child = expand(node, problem, config, np.random.default_rng(0))
        assert child.state == (age_hi, income_hi)
        assert node.untried == []
        assert node.children[income_hi] is child

    def test_expand_without_untried_errors(self, tiny_matrix):
        node = SearchNode(body=tiny_matrix.root_state())
        with pytest.raises(ValueError):
            expand(node, make_problem(tiny_matrix), default_config(), np.random.default_rng(0))

    def test_expansion_order_reproducible(self):
        m = planted_matrix(0)
        config = default_config(min_support_to_expand=0)
        problem = make_problem(m)
        orders = []
        for _ in range(2):
            root = SearchNode(body=m.root_state())
            root.untried = legal_actions(root, problem, config)
            rng = np.random.default_rng(42)
            orders.append(
                [expand(root, problem, config, rng).state[-1] for _ in range(6)]
            )
        assert orders[0] == orders[1]

    def test_backpropagate_accounting(self, tiny_matrix):
        nodes = [SearchNode(body=tiny_matrix.root_state()) for _ in range(3)]
        backpropagate(nodes, 0.5)
        assert all(n.visits == 1 and n.total_reward == 0.5 for n in nodes)
        backpropagate(nodes, 1.0)
        backpropagate(nodes, 0.0)
        assert all(n.visits == 3 for n in nodes)
        assert all(n.mean_reward == pytest.approx(0.5) for n in nodes)


class TestSimulate:
    def test_terminal_node_returns_own_reward(self, tiny_matrix):
        config = default_config(max_body_predicates=1, min_support_to_expand=0)
        problem = make_problem(tiny_matrix)
        body = tiny_matrix.extend(tiny_matrix.root_state(), 0)
        node = SearchNode(body=body, terminal=True)
        expected = reward_from_metrics(
            metrics_from_columns(body.column, tiny_matrix.target), "precision"
        )
        got = simulate(node, problem, config, np.random.default_rng(0))
        assert got == expected

    def test_threshold_node_skips_rollout(self):
        cols = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=bool)
        y = np.array([1, 1, 0, 0], dtype=bool)
        m = boolean_matrix(cols, y)
        config = default_config(
            terminal_reward_threshold=0.9, min_support_to_expand=0
        )
        problem = make_problem(m)
        body = m.extend(m.root_state(), 0)  # precision 1.0 >= 0.9
        node = SearchNode(body=body, terminal=True)
        assert simulate(node, problem, config, np.random.default_rng(0)) == 1.0

    def test_rollout_frequency_matches_exhaustive_path_count(self):
        # Enumerate the exact probability that a uniformly random rollout
        # from the empty state ends at a reward-1.0 terminal, then compare
        # the Monte Carlo frequency against it.
        rng = np.random.default_rng(8)
        cols = rng.random((120, 5)) < 0.55
        y = cols[:, 0] & cols[:, 1]
        m = boolean_matrix(cols, y)
        config = default_config(
            max_body_predicates=2, terminal_reward_threshold=1.0,
            min_support_to_expand=5,
        )
        problem = make_problem(m)

        def viable(state):
            used = set(state.ids)
            out = []
            for pid in range(m.n_predicates):
                if pid in used:
                    continue
                nxt = m.extend(state, pid)
                if nxt.coverage >= config.min_support_to_expand:
                    out.append(nxt)
            return out

        def terminal_value(state):
            return reward_from_metrics(
                metrics_from_columns(state.column, m.target), "precision"
            )

        def reach_prob(state):
            t = terminal_value(state)
            if len(state.ids) >= config.max_body_predicates or (
                state.ids and t >= config.terminal_reward_threshold
            ):
                return 1.0 if t == 1.0 else 0.0
            nxt = viable(state)
            if not nxt:
                return 0.0
            return sum(reach_prob(s) for s in nxt) / len(nxt)

        exact = reach_prob(m.root_state())
        assert exact > 0, "fixture must make the perfect rule reachable"

        trials = 3000
        rng = np.random.default_rng(123)
        root = SearchNode(body=m.root_state())
        hits = sum(
            simulate(root, problem, config, rng) == 1.0 for _ in range(trials)
        )
        freq = hits / trials
        sigma = math.sqrt(exact * (1 - exact) / trials)
        assert abs(freq - exact) < 4 * sigma + 1e-9


class TestSearch:
    def test_planted_rules_harvested(self):
        m = planted_matrix(3)
        report = search(m, default_config(total_rollouts=500))
        keys = {sr.key for sr in report.harvested}
        assert "label|0,1" in keys
        assert "label|3,4,5" in keys

    def test_root_visits_equal_rollouts_and_conservation(self):
        m = planted_matrix(5)
        config = default_config(total_rollouts=300)
        report, root = search_tree(m, config)
        assert root.visits == report.rollouts == 300

        def check(node):
            if node.children:
                assert node.visits == 1 + sum(
                    c.visits for c in node.children.values()
                )
            for c in node.children.values():
                assert c.coverage_count <= node.coverage_count
                check(c)

        # The root is never expanded itself, so its identity reads
        # visits = rollouts = sum of children + first-visit bookkeeping.
        for child in root.children.values():
            check(child)
        assert root.visits == sum(c.visits for c in root.children.values())

    def test_harvest_soundness(self):
        m = planted_matrix(7)
        config = default_config(total_rollouts=400)
        report = search(m, config)
        assert report.harvested, "fixture must harvest something"
        for sr in report.harvested:
            col = m.body_column(sr.rule.body)
            fresh = metrics_from_columns(col, m.target)
            assert fresh == sr.metrics
            assert (
                reward_from_metrics(fresh, config.effective_terminal_metric)
                >= config.terminal_reward_threshold
            )

    def test_determinism(self):
        m = planted_matrix(11)
        config = default_config(total_rollouts=250, rng_seed=9)
        a = search(m, config)
        b = search(m, config)
        assert report_core(a) == report_core(b)

    def test_zero_legal_actions_is_a_diagnostic_not_an_error(self, tiny_matrix):
        config = default_config(min_support_to_expand=100)
        report = search(tiny_matrix, config)
        assert report.harvested == ()
        assert report.rollouts == 0
        assert any("support floor" in d for d in report.diagnostics)

    def test_max_body_bounds_harvest(self):
        m = planted_matrix(13)
        report = search(m, default_config(max_body_predicates=2, total_rollouts=300))
        assert report.harvested
        assert all(len(sr.rule.body) <= 2 for sr in report.harvested)

    def test_terminal_counts_by_reason(self):
        m = planted_matrix(17)
        report = search(m, default_config(total_rollouts=300))
        assert set(report.terminal_counts) == {"threshold", "max_length", "exhausted"}
        assert report.terminal_counts["threshold"] > 0

    def test_target_override(self):
        m = planted_matrix(19)
        other = ~m.target
        report = search(m, default_config(total_rollouts=100), target=other,
                        target_name="negated")
        assert all(sr.rule.target == "negated" for sr in report.harvested)

    def test_allowed_ids_restriction(self):
        m = planted_matrix(23)
        report = search(
            m, default_config(total_rollouts=200), allowed_ids=(0, 1, 2)
        )
        used = {pid for sr in report.harvested for pid in sr.rule.body}
        assert used <= {0, 1, 2}


class TestBanditSanity:
    def make_bandit(self):
        # Two arms with fixed rewards 0.9 / 0.1: single-step terminal rules.
        cols = np.zeros((20, 2), dtype=bool)
        cols[:10, 0] = True
        cols[10:, 1] = True
        y = np.zeros(20, dtype=bool)
        y[:9] = True  # arm 0 precision 0.9
        y[10] = True  # arm 1 precision 0.1
        return boolean_matrix(cols, y)

    def test_better_arm_dominates(self):
        m = self.make_bandit()
        config = SearchConfig(
            total_rollouts=1000,
            exploration_c=math.sqrt(2),
            max_body_predicates=1,
            terminal_reward_threshold=0.95,
            reward_metric="precision",
            min_support_to_expand=0,
            rng_seed=4,
        )
        report, root = search_tree(m, config)
        visits = {pid: c.visits for pid, c in root.children.items()}
        assert visits[0] / (visits[0] + visits[1]) >= 0.8


class TestRootParallel:
    def test_merge_equals_union_of_runs(self):
        m = planted_matrix(29)
        config = default_config(total_rollouts=150, rng_seed=77)
        merged = search_root_parallel(m, config, workers=3)
        union = {}
        for w in range(3):
            wconf = default_config(
                total_rollouts=150, rng_seed=derive_seed(77, "worker", w)
            )
            for sr in search(m, wconf).harvested:
                union.setdefault(sr.key, sr)
        assert {sr.key for sr in merged.harvested} == set(union)
        assert merged.rollouts == 450
