"""Natural-language rendering of rules, retrieval and prompt assembly.

A lexicon maps predicate kinds (and optional per-predicate or per-target
overrides) to phrase templates; translation is deterministic and injective
on canonical keys for a fixed lexicon because the body phrase list is
embedded verbatim. Retrieval runs in two modes: exact body match against a
sample, or token-set Jaccard similarity against free text. Everything here
is pure, so it is safe anywhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

from .dataset import (
    Sample,
    SequenceSample,
    evaluate_predicate,
    predicate_from_def,
)
from .rules import Rulebook, RulebookEntry, RuleMetrics

LEXICON_FORMAT = 1

#: Placeholder aliases accepted in prompt templates.
RULES_SLOTS = ("rules", "guidelines")
INPUT_SLOTS = ("input", "logs")

EMPTY_RULEBOOK_SENTINEL = "no known patterns"


class TranslationError(ValueError):
    """Raised for missing templates or unresolved placeholders."""


DEFAULT_LEXICON_TEMPLATES: dict[str, str] = {
    "equals": "{feature} is {value}",
    "flag": "{feature} holds",
    "interval-halfopen": "{feature} is at least {lo} and below {hi}",
    "interval-closed": "{feature} is between {lo} and {hi}",
    "pattern": "events {events} occur in order",
    "event-joiner": " and ",
    "joiner": " and ",
    "rule": "If {body}, then {target} ({confidence}).",
    "confidence": "confidence of {percent}",
    "percent-decimals": "2",
    "target-default": "{target} is indicated",
}


@dataclass(frozen=True)
class Lexicon:
    """Phrase templates per predicate kind plus connectives and overrides.

    Keys beyond the defaults: ``target.<name>`` overrides the phrase for one
    target, ``phrase.<display>`` overrides the phrase for one predicate.
    """

    templates: Mapping[str, str] = field(default_factory=dict)
    version: int = LEXICON_FORMAT

    def get(self, key: str) -> str | None:
        if key in self.templates:
            return self.templates[key]
        return DEFAULT_LEXICON_TEMPLATES.get(key)

    def require(self, key: str) -> str:
        value = self.get(key)
        if value is None:
            raise TranslationError(f"lexicon lacks a template for {key!r}")
        return value


def load_lexicon(path: Union[str, Path]) -> Lexicon:
    """Structured text lexicon: a format line, then ``key: value`` lines."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("lexicon-format:"):
        raise TranslationError(f"{path}: missing lexicon-format line")
    version = int(lines[0].split(":", 1)[1].strip())
    if version != LEXICON_FORMAT:
        raise TranslationError(f"{path}: unsupported lexicon format {version}")
    templates: dict[str, str] = {}
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        key, sep, value = raw.partition(": ")
        if not sep:
            raise TranslationError(f"{path}:{ln}: expected 'key: value'")
        templates[key.strip()] = value
    return Lexicon(templates, version)


def dumps_lexicon(lexicon: Lexicon) -> str:
    lines = [f"lexicon-format: {lexicon.version}"]
    for key in sorted(lexicon.templates):
        lines.append(f"{key}: {lexicon.templates[key]}")
    return "\n".join(lines) + "\n"


_PLACEHOLDER = re.compile(r"\{([a-z_-]+)\}")


def _fill(template: str, slots: Mapping[str, str], context: str) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise TranslationError(
                f"unfilled placeholder {{{name}}} in template for {context}"
            )
        return slots[name]

    return _PLACEHOLDER.sub(sub, template)


def _fmt_num(x: object) -> str:
    if isinstance(x, float):
        return f"{x:g}"
    return str(x)


def predicate_phrase(pdef: Mapping, lexicon: Lexicon) -> str:
    """Phrase for one predicate definition under the lexicon."""
    override = lexicon.get(f"phrase.{pdef['display']}")
    if override is not None:
        return override
    kind = pdef["kind"]
    if kind == "equals":
        return _fill(
            lexicon.require("equals"),
            {"feature": pdef["feature"], "value": _fmt_num(pdef["value"])},
            "equals",
        )
    if kind == "flag":
        return _fill(lexicon.require("flag"), {"feature": pdef["feature"]}, "flag")
    if kind == "in_interval":
        key = "interval-closed" if pdef["hi_closed"] else "interval-halfopen"
        return _fill(
            lexicon.require(key),
            {
                "feature": pdef["feature"],
                "lo": _fmt_num(pdef["lo"]),
                "hi": _fmt_num(pdef["hi"]),
            },
            key,
        )
    if kind == "ordered_pattern":
        joiner = lexicon.require("event-joiner")
        return _fill(
            lexicon.require("pattern"),
            {"events": joiner.join(pdef["events"])},
            "pattern",
        )
    raise TranslationError(f"no template for predicate kind {kind!r}")


def target_phrase(target: str, lexicon: Lexicon) -> str:
    override = lexicon.get(f"target.{target}")
    if override is not None:
        return override
    return _fill(lexicon.require("target-default"), {"target": target}, "target")


def confidence_phrase(metrics: RuleMetrics, lexicon: Lexicon) -> str:
    decimals = int(lexicon.require("percent-decimals"))
    percent = f"{metrics.precision * 100:.{decimals}f}%"
    return _fill(lexicon.require("confidence"), {"percent": percent}, "confidence")


def translate_rule(
    body_defs: Sequence[Mapping],
    target: str,
    metrics: RuleMetrics,
    lexicon: Lexicon,
) -> str:
    """One deterministic sentence for a rule under the lexicon."""
    joiner = lexicon.require("joiner")
    body = joiner.join(predicate_phrase(d, lexicon) for d in body_defs)
    return _fill(
        lexicon.require("rule"),
        {
            "body": body,
            "target": target_phrase(target, lexicon),
            "confidence": confidence_phrase(metrics, lexicon),
        },
        "rule",
    )


def render_rulebook(
    book: Rulebook,
    lexicon: Lexicon | None = None,
    allow_empty: bool = False,
) -> str:
    """Numbered guidelines block, ordered by reward desc then coverage desc.

    With ``allow_empty``, an empty book renders the sentinel line so that
    the absence of a match stays informative downstream.
    """
    if not book.entries:
        if allow_empty:
            return EMPTY_RULEBOOK_SENTINEL
        raise TranslationError("rulebook is empty")
    ordered = sorted(
        book.entries,
        key=lambda e: (-e.reward, -e.metrics.coverage_count, e.key),
    )
    lines = []
    for i, entry in enumerate(ordered, start=1):
        text = (
            entry.translation
            if lexicon is None
            else translate_rule(entry.body_defs, entry.rule.target, entry.metrics, lexicon)
        )
        lines.append(f"{i}. {text}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[A-Za-z0-9_]+")


def _tokens(text: str) -> frozenset[str]:
    return frozenset(t.lower() for t in _TOKEN.findall(text))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def entry_matches_sample(
    entry: RulebookEntry, sample: Union[Sample, SequenceSample, Mapping]
) -> bool:
    """Exact mode: every body predicate of the entry holds on the sample.

    Entries whose predicates cannot evaluate on this sample shape (a flag
    rule against an event sequence, a missing feature) simply do not match.
    """
    from .dataset import DatasetError

    if isinstance(sample, Mapping):
        sample = Sample(dict(sample), label=False)
    try:
        for d in entry.body_defs:
            if not evaluate_predicate(predicate_from_def(d), sample):
                return False
    except DatasetError:
        return False
    return True


def retrieve_rules(
    query: Union[str, Sample, SequenceSample, Mapping],
    book: Rulebook,
    k: int,
) -> list[RulebookEntry]:
    """Top-k relevant rules for a query.

    Sample-shaped queries use exact predicate match ranked by reward;
    free-text queries use token-set Jaccard against the translations.
    Ties break deterministically on the canonical key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(query, str):
        q = _tokens(query)
        scored = sorted(
            book.entries,
            key=lambda e: (-_jaccard(q, _tokens(e.translation)), e.key),
        )
        return list(scored[:k])
    matched = [e for e in book.entries if entry_matches_sample(e, query)]
    matched.sort(key=lambda e: (-e.reward, e.key))
    return matched[:k]


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    """A filled prompt plus its parts and length for window budgeting."""

    rendered: str
    template: str
    rules_block: str
    input_block: str
    length_chars: int
    length_tokens_estimate: int


def load_template(path: Union[str, Path]) -> str:
    """Plain-text template; an optional leading format line is stripped."""
    text = Path(path).read_text()
    if text.startswith("template-format:"):
        _, _, text = text.partition("\n")
    return text


def assemble_prompt(template: str, rules_text: str, task_input: str) -> PromptBundle:
    """Substitute {rules}/{guidelines} and {input}/{logs} exactly once each.

    Any other brace placeholder is an error; output is byte-stable for
    identical inputs.
    """
    names = _PLACEHOLDER.findall(template)
    unknown = [n for n in names if n not in RULES_SLOTS + INPUT_SLOTS]
    if unknown:
        raise TranslationError(f"unknown template placeholders: {unknown}")
    n_rules = sum(names.count(n) for n in RULES_SLOTS)
    n_input = sum(names.count(n) for n in INPUT_SLOTS)
    if n_rules != 1:
        raise TranslationError("template must contain the rules block exactly once")
    if n_input != 1:
        raise TranslationError("template must contain the input block exactly once")
    slots = {name: rules_text for name in RULES_SLOTS}
    slots.update({name: task_input for name in INPUT_SLOTS})
    rendered = _fill(template, slots, "prompt template")
    return PromptBundle(
        rendered=rendered,
        template=template,
        rules_block=rules_text,
        input_block=task_input,
        length_chars=len(rendered),
        length_tokens_estimate=(len(rendered) + 3) // 4,
    )
