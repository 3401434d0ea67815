"""rulemine: distill labeled datasets into first-order logic rules with
Monte Carlo Tree Search, translate them into natural-language guidelines,
and assemble rule-augmented prompts."""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    Feature,
    FeatureSchema,
    Predicate,
    PredicateMatrix,
    PredicateSpaceBuilder,
    Sample,
    SequenceDataset,
    SequenceSample,
    TabularDataset,
    build_matrix,
    evaluate_predicate,
    gini_split_points,
    load_sequences,
    load_tabular,
)
from .mcts import SearchConfig, SearchReport, search, uct_score  # noqa: F401
from .oracle import enumerate_rules, search_recall  # noqa: F401
from .rules import (  # noqa: F401
    Rule,
    Rulebook,
    RuleMetrics,
    ScoredRule,
    canonicalize,
    clean_rules,
    dominance_prune,
    load_rulebook,
    reward,
    rule_metrics,
    save_rulebook,
)
from .translate import Lexicon, assemble_prompt, render_rulebook, retrieve_rules, translate_rule  # noqa: F401
