import pytest

from rulemine.dataset import SequenceSample, pattern_predicate, predicate_def
from rulemine.pipeline import resolve_lexicon
from rulemine.rules import (
    Rule,
    RuleMetrics,
    Rulebook,
    RulebookEntry,
    ScoredRule,
    make_entry,
)
from rulemine.translate import (
    EMPTY_RULEBOOK_SENTINEL,
    Lexicon,
    TranslationError,
    assemble_prompt,
    dumps_lexicon,
    load_lexicon,
    render_rulebook,
    retrieve_rules,
    translate_rule,
)

from conftest import sequence_corpus


def metrics(precision=1.0, coverage=10):
    return RuleMetrics(coverage, int(coverage * precision), precision, 0.5, 0.6, 0.1)


def entry(key, translation, reward=1.0, coverage=10, body_defs=(), target="t"):
    defs = body_defs or ({"kind": "flag", "feature": "f", "display": "f"},)
    return RulebookEntry(
        rule=Rule(tuple(range(len(defs))), target),
        metrics=metrics(reward, coverage),
        reward=reward,
        translation=translation,
        key=key,
        body_names=tuple(d["display"] for d in defs),
        body_defs=tuple(defs),
    )


class TestTranslateRule:
    def test_log_rule_anomaly_lexicon_phrasing(self):
        lex = resolve_lexicon("anomaly")
        pdef = predicate_def(pattern_predicate(0, ["E11", "E28"]))
        text = translate_rule([pdef], "abnormal", metrics(0.9553, 10000), lex)
        assert text == (
            "If events E11 and E28 occur sequentially, it indicates a high "
            "probability of anomaly with a confidence of 95.53%"
        )

    def test_relation_rule_with_overrides(self):
        lex = Lexicon(
            {
                "phrase.player_of": "someone is a player of a certain team",
                "target.member_of": "they are also a member of that team",
                "rule": "If {body}, then {target}.",
            }
        )
        pdef = {"kind": "flag", "feature": "player_of", "display": "player_of"}
        text = translate_rule([pdef], "member_of", metrics(1.0), lex)
        assert text == (
            "If someone is a player of a certain team, then they are also a "
            "member of that team."
        )

    def test_single_flag_default_template(self):
        lex = Lexicon()
        pdef = {"kind": "flag", "feature": "visited_yellow", "display": "visited_yellow"}
        text = translate_rule([pdef], "win", metrics(0.8, 20), lex)
        assert text == (
            "If visited_yellow holds, then win is indicated (confidence of 80.00%)."
        )

    def test_confidence_two_decimals(self):
        lex = Lexicon()
        text = translate_rule(
            [{"kind": "flag", "feature": "f", "display": "f"}],
            "t",
            metrics(0.9553, 10000),
            lex,
        )
        assert "confidence of 95.53%" in text

    def test_missing_kind_template_names_the_kind(self):
        lex = Lexicon({"pattern": None})

        class Broken(Lexicon):
            def get(self, key):
                if key == "pattern":
                    return None
                return super().get(key)

        pdef = predicate_def(pattern_predicate(0, ["E1"]))
        with pytest.raises(TranslationError, match="pattern"):
            translate_rule([pdef], "t", metrics(), Broken())

    def test_distinct_bodies_render_distinctly(self):
        lex = Lexicon()
        a = translate_rule(
            [{"kind": "flag", "feature": "a", "display": "a"}], "t", metrics(), lex
        )
        b = translate_rule(
            [{"kind": "flag", "feature": "b", "display": "b"}], "t", metrics(), lex
        )
        assert a != b


class TestRenderRulebook:
    def test_numbered_and_ordered(self):
        book = Rulebook(
            (
                entry("t|1", "low", reward=0.8),
                entry("t|2", "high", reward=0.99),
                entry("t|3", "mid-more-coverage", reward=0.9, coverage=50),
                entry("t|4", "mid-less-coverage", reward=0.9, coverage=5),
            ),
            {},
        )
        text = render_rulebook(book)
        assert text.splitlines() == [
            "1. high",
            "2. mid-more-coverage",
            "3. mid-less-coverage",
            "4. low",
        ]

    def test_tie_breaks_on_key(self):
        book = Rulebook(
            (entry("t|b", "second", 0.9, 10), entry("t|a", "first", 0.9, 10)),
            {},
        )
        assert render_rulebook(book).splitlines() == ["1. first", "2. second"]

    def test_empty_book_sentinel(self):
        book = Rulebook((), {})
        assert render_rulebook(book, allow_empty=True) == EMPTY_RULEBOOK_SENTINEL
        with pytest.raises(TranslationError):
            render_rulebook(book)

    def test_relexiconing_uses_stored_defs(self):
        book = Rulebook((entry("t|1", "stored text"),), {})
        fresh = render_rulebook(book, lexicon=Lexicon())
        assert "f holds" in fresh


class TestRetrieveRules:
    def _book(self):
        _, m = sequence_corpus(3, n=50)
        e11 = next(p.id for p in m.predicates if p.display == "E11")
        e28 = next(p.id for p in m.predicates if p.display == "E28")
        from rulemine.rules import metrics_from_columns

        col = m.body_column((e11, e28))
        sr = ScoredRule(
            Rule((e11, e28), "abnormal", ordered=True),
            metrics_from_columns(col, m.target),
            0.9553,
        )
        seq_entry = make_entry(sr, m.predicates, "events E11 and E28 occur sequentially")
        flag = entry(
            "abnormal|99",
            "completely different words",
            reward=0.5,
            body_defs=({"kind": "flag", "feature": "other", "display": "other"},),
            target="abnormal",
        )
        return Rulebook((seq_entry, flag), {})

    def test_exact_mode_matches_ordered_log_block(self):
        book = self._book()
        got = retrieve_rules(SequenceSample(("E5", "E11", "E9", "E28"), True), book, k=3)
        assert [e.key for e in got] == [book.entries[0].key]

    def test_exact_mode_soundness(self):
        book = self._book()
        sample = SequenceSample(("E28", "E11"), False)
        assert retrieve_rules(sample, book, k=5) == []

    def test_k_larger_than_book(self):
        book = self._book()
        got = retrieve_rules("events E11 E28 sequentially", book, k=99)
        assert len(got) == len(book.entries)

    def test_lexical_mode_ranks_by_jaccard(self):
        book = self._book()
        got = retrieve_rules("do events E11 and E28 occur sequentially?", book, k=1)
        assert got[0].key == book.entries[0].key

    def test_disjoint_tokens_stable_order(self):
        book = self._book()
        got = retrieve_rules("zzz qqq", book, k=2)
        assert [e.key for e in got] == sorted(e.key for e in book.entries)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            retrieve_rules("x", Rulebook((), {}), k=0)


class TestAssemblePrompt:
    def test_alias_placeholders(self):
        bundle = assemble_prompt("A {guidelines} B {logs} C", "R", "I")
        assert bundle.rendered == "A R B I C"
        assert bundle.rules_block == "R"
        assert bundle.input_block == "I"

    def test_byte_stable(self):
        a = assemble_prompt("{rules}|{input}", "r", "i").rendered
        b = assemble_prompt("{rules}|{input}", "r", "i").rendered
        assert a == b

    def test_unknown_placeholder_is_an_error(self):
        with pytest.raises(TranslationError, match="wat"):
            assemble_prompt("{rules} {wat} {input}", "r", "i")

    def test_rules_block_required_exactly_once(self):
        with pytest.raises(TranslationError, match="rules"):
            assemble_prompt("{input} only", "r", "i")
        with pytest.raises(TranslationError, match="rules"):
            assemble_prompt("{rules} {guidelines} {input}", "r", "i")

    def test_input_block_required(self):
        with pytest.raises(TranslationError, match="input"):
            assemble_prompt("{rules} only", "r", "i")

    def test_length_budgeting_fields(self):
        bundle = assemble_prompt("{rules} {input}", "abcd", "efgh")
        assert bundle.length_chars == len(bundle.rendered)
        assert bundle.length_tokens_estimate == (len(bundle.rendered) + 3) // 4

    def test_sentinel_flows_through(self):
        book = Rulebook((), {})
        text = render_rulebook(book, allow_empty=True)
        bundle = assemble_prompt("{rules}|{input}", text, "x")
        assert EMPTY_RULEBOOK_SENTINEL in bundle.rendered


class TestLexiconFiles:
    def test_round_trip(self, tmp_path):
        lex = Lexicon({"rule": "If {body}, {target} ({confidence})", "joiner": " and "})
        path = tmp_path / "lex.txt"
        path.write_text(dumps_lexicon(lex))
        again = load_lexicon(path)
        assert dict(again.templates) == dict(lex.templates)

    def test_version_line_required(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("rule: whatever\n")
        with pytest.raises(TranslationError, match="lexicon-format"):
            load_lexicon(path)

    def test_builtin_lexicons_resolve(self):
        assert resolve_lexicon(None).get("rule")
        assert resolve_lexicon("anomaly").get("pattern") == "events {events} occur sequentially"
