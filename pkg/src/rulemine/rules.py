"""Rules, their metrics on a predicate matrix, and rule-set cleaning.

A rule is a conjunction of body predicates implying a target. All metric
functions are pure over immutable inputs; cleaning operates on an owned
list. Cleaned, translated rules are persisted as a versioned structured
text rulebook with a bit-exact round trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .dataset import (
    Predicate,
    PredicateMatrix,
    pattern_predicate,
    predicate_def,
)

REWARD_METRICS = ("precision", "f1", "precision_plus_recall")

RULEBOOK_FORMAT = 1

PROVENANCES = ("searched", "oracle", "handcrafted")


@dataclass(frozen=True)
class Rule:
    """Conjunction of body predicate ids implying ``target``.

    ``ordered`` marks rules mined from sequence data, where the body ids
    spell out one ordered event pattern and their order is meaningful.
    """

    body: tuple[int, ...]
    target: str
    provenance: str = "searched"
    ordered: bool = False

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if len(set(self.body)) != len(self.body):
            raise ValueError("duplicate predicate ids in rule body")


@dataclass(frozen=True)
class RuleMetrics:
    coverage_count: int
    positive_count: int
    precision: float
    recall: float
    f1: float
    coverage_fraction: float


@dataclass(frozen=True)
class ScoredRule:
    """A rule with its metrics, reward and (for harvests) terminal reason."""

    rule: Rule
    metrics: RuleMetrics
    reward: float
    terminal_reason: str = ""

    @property
    def key(self) -> str:
        return canonicalize(self.rule)


def canonicalize(r: Rule) -> str:
    """Order-insensitive canonical key: target plus sorted body ids.

    Ordered (pattern) rules keep their body order, which is the pattern's
    internal event order.
    """
    ids = r.body if r.ordered else tuple(sorted(r.body))
    return f"{r.target}|{','.join(str(i) for i in ids)}"


def rule_metrics(r: Rule, m: PredicateMatrix, target: np.ndarray | None = None) -> RuleMetrics:
    """Metrics of ``r`` on ``m``; the empty body is the vacuous conjunction.

    ``target`` overrides the matrix target column (used by per-target
    search jobs).
    """
    tgt = m.target if target is None else target
    col = m.body_column(r.body)
    return metrics_from_columns(col, tgt)


def metrics_from_columns(body: np.ndarray, target: np.ndarray) -> RuleMetrics:
    coverage = int(body.sum())
    positive = int((body & target).sum())
    total_pos = int(target.sum())
    precision = positive / coverage if coverage else 0.0
    recall = positive / total_pos if total_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RuleMetrics(
        coverage_count=coverage,
        positive_count=positive,
        precision=precision,
        recall=recall,
        f1=f1,
        coverage_fraction=coverage / len(body) if len(body) else 0.0,
    )


def reward_from_metrics(metrics: RuleMetrics, metric: str) -> float:
    if metric == "precision":
        return metrics.precision
    if metric == "f1":
        return metrics.f1
    if metric == "precision_plus_recall":
        return metrics.precision + metrics.recall
    raise ValueError(f"unknown reward metric {metric!r}")


def reward(r: Rule, m: PredicateMatrix, metric: str) -> float:
    """Reward of a rule on a matrix under the configured metric."""
    return reward_from_metrics(rule_metrics(r, m), metric)


def clean_rules(
    rules: Sequence[ScoredRule], min_reward: float, min_coverage_count: int
) -> list[ScoredRule]:
    """Keep rules with reward >= min_reward and coverage >= the floor.

    Duplicates (same canonical key) collapse to the first occurrence.
    """
    seen: set[str] = set()
    out: list[ScoredRule] = []
    for sr in rules:
        if sr.reward < min_reward or sr.metrics.coverage_count < min_coverage_count:
            continue
        key = sr.key
        if key in seen:
            continue
        seen.add(key)
        out.append(sr)
    return out


def _body_subsumes(a: Rule, b: Rule) -> bool:
    # True when a's body is a proper generalisation of b's.
    if a.ordered != b.ordered:
        return False
    if len(a.body) >= len(b.body):
        return False
    if a.ordered:
        it = iter(b.body)
        return all(x in it for x in a.body)
    return set(a.body) < set(b.body)


def dominance_prune(rules: Sequence[ScoredRule]) -> list[ScoredRule]:
    """Drop every rule dominated by an equal-target sub-rule.

    B is removed when some A with the same target has body(A) a proper
    subset of body(B) (a proper subsequence for ordered rules) and
    reward(A) >= reward(B). Dominance is transitive, so one pass over the
    input is already a fixed point.
    """
    out: list[ScoredRule] = []
    for b in rules:
        dominated = any(
            a.rule.target == b.rule.target
            and _body_subsumes(a.rule, b.rule)
            and a.reward >= b.reward
            for a in rules
        )
        if not dominated:
            out.append(b)
    return out


def sort_scored(rules: Iterable[ScoredRule]) -> list[ScoredRule]:
    """Stable presentation order: reward desc, coverage desc, key asc."""
    return sorted(
        rules, key=lambda sr: (-sr.reward, -sr.metrics.coverage_count, sr.key)
    )


# ---------------------------------------------------------------------------
# Rulebook
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RulebookEntry:
    rule: Rule
    metrics: RuleMetrics
    reward: float
    translation: str
    key: str
    body_names: tuple[str, ...]
    body_defs: tuple[dict, ...]


@dataclass(frozen=True)
class Rulebook:
    """Cleaned, canonicalised, translated rules plus run metadata."""

    entries: tuple[RulebookEntry, ...]
    metadata: dict

    def __post_init__(self) -> None:
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("canonical keys must be unique in a rulebook")

    def targets(self) -> tuple[str, ...]:
        seen: list[str] = []
        for e in self.entries:
            if e.rule.target not in seen:
                seen.append(e.rule.target)
        return tuple(seen)


def merged_body_defs(rule: Rule, predicates: Sequence[Predicate]) -> tuple[dict, ...]:
    """Self-contained body definitions for a rule.

    Ordered rules fold into a single ordered-pattern definition so the rule
    reads (and re-evaluates) as one pattern, independent of the originating
    predicate space.
    """
    preds = [predicates[i] for i in rule.body]
    if rule.ordered:
        events = [e for p in preds for e in p.events]
        return (predicate_def(pattern_predicate(0, events)),)
    return tuple(predicate_def(p) for p in preds)


def make_entry(
    sr: ScoredRule, predicates: Sequence[Predicate], translation: str
) -> RulebookEntry:
    """Self-contained rulebook entry for one scored rule."""
    defs = merged_body_defs(sr.rule, predicates)
    names = tuple(d["display"] for d in defs)
    return RulebookEntry(
        rule=sr.rule,
        metrics=sr.metrics,
        reward=sr.reward,
        translation=translation,
        key=sr.key,
        body_names=names,
        body_defs=defs,
    )


def _metrics_dict(m: RuleMetrics) -> dict:
    return {
        "coverage_count": m.coverage_count,
        "positive_count": m.positive_count,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "coverage_fraction": m.coverage_fraction,
    }


def _metrics_from_dict(d: dict) -> RuleMetrics:
    return RuleMetrics(
        coverage_count=int(d["coverage_count"]),
        positive_count=int(d["positive_count"]),
        precision=float(d["precision"]),
        recall=float(d["recall"]),
        f1=float(d["f1"]),
        coverage_fraction=float(d["coverage_fraction"]),
    )


def dumps_rulebook(book: Rulebook) -> str:
    """Canonical text serialisation; loading and re-dumping is bit-exact."""
    lines = [f"rulebook-format: {RULEBOOK_FORMAT}"]
    lines.append(f"metadata: {json.dumps(book.metadata, sort_keys=True)}")
    for e in book.entries:
        lines.append("")
        lines.append("[rule]")
        lines.append(f"key: {json.dumps(e.key)}")
        lines.append(f"target: {json.dumps(e.rule.target)}")
        lines.append(f"provenance: {e.rule.provenance}")
        lines.append(f"ordered: {int(e.rule.ordered)}")
        lines.append(f"body-ids: {json.dumps(list(e.rule.body))}")
        lines.append(f"body-names: {json.dumps(list(e.body_names))}")
        lines.append(f"body-defs: {json.dumps(list(e.body_defs), sort_keys=True)}")
        lines.append(f"metrics: {json.dumps(_metrics_dict(e.metrics), sort_keys=True)}")
        lines.append(f"reward: {json.dumps(e.reward)}")
        lines.append(f"translation: {json.dumps(e.translation)}")
    return "\n".join(lines) + "\n"


def loads_rulebook(text: str) -> Rulebook:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("rulebook-format:"):
        raise ValueError("not a rulebook: missing format line")
    version = int(lines[0].split(":", 1)[1].strip())
    if version != RULEBOOK_FORMAT:
        raise ValueError(f"unsupported rulebook format {version}")
    metadata: dict = {}
    entries: list[RulebookEntry] = []
    fields: dict[str, str] = {}

    def flush() -> None:
        if not fields:
            return
        rule = Rule(
            body=tuple(json.loads(fields["body-ids"])),
            target=json.loads(fields["target"]),
            provenance=fields["provenance"],
            ordered=bool(int(fields["ordered"])),
        )
        entries.append(
            RulebookEntry(
                rule=rule,
                metrics=_metrics_from_dict(json.loads(fields["metrics"])),
                reward=float(json.loads(fields["reward"])),
                translation=json.loads(fields["translation"]),
                key=json.loads(fields["key"]),
                body_names=tuple(json.loads(fields["body-names"])),
                body_defs=tuple(json.loads(fields["body-defs"])),
            )
        )
        fields.clear()

    in_rule = False
    for line in lines[1:]:
        if not line.strip():
            continue
        if line == "[rule]":
            flush()
            in_rule = True
            continue
        name, _, value = line.partition(": ")
        if not in_rule:
            if name == "metadata":
                metadata = json.loads(value)
            else:
                raise ValueError(f"unexpected header line {line!r}")
        else:
            fields[name] = value
    flush()
    return Rulebook(tuple(entries), metadata)


def save_rulebook(book: Rulebook, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_rulebook(book))


def load_rulebook(path: Union[str, Path]) -> Rulebook:
    return loads_rulebook(Path(path).read_text())
