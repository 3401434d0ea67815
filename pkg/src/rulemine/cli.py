"""Command-line interface orchestrating the pipeline.

Commands: ``mine``, ``eval-rules``, ``oracle-check``, ``gridworld
collect|mine|eval``, ``augment`` and ``rerun``. Every command writes its
artifacts under the configured output directory with stable filenames plus
a ``manifest.json`` capturing config, input fingerprints and artifact
hashes; ``rerun`` re-executes a manifest and verifies the artifacts byte
for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Sequence

from . import gridworld as gw
from . import pipeline, plots
from .advisor import AdvisorError, ChatEndpoint, EndpointConfig, TransportError
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .dataset import DatasetError
from .gridworld import GridError
from .manifest import RunManifest, compare_artifacts, read_manifest
from .oracle import BudgetExceededError
from .rules import load_rulebook, save_rulebook
from .translate import (
    TranslationError,
    assemble_prompt,
    load_template,
    render_rulebook,
    retrieve_rules,
)

_STAGES = (
    (ConfigError, "config"),
    (BudgetExceededError, "oracle"),
    (DatasetError, "ingest"),
    (TransportError, "remote"),
    (AdvisorError, "formulate"),
    (TranslationError, "translate"),
    (GridError, "gridworld"),
)


def _stage_of(exc: Exception) -> str:
    for etype, stage in _STAGES:
        if isinstance(exc, etype):
            return stage
    return "run"


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _rules_tsv(book) -> str:
    cols = [
        "key", "target", "provenance", "body_size", "body", "precision",
        "recall", "f1", "coverage_count", "coverage_fraction",
        "positive_count", "reward", "translation",
    ]
    lines = ["\t".join(cols)]
    for e in book.entries:
        m = e.metrics
        lines.append(
            "\t".join(
                [
                    e.key,
                    e.rule.target,
                    e.rule.provenance,
                    str(len(e.body_defs)),
                    " AND ".join(e.body_names),
                    _fmt(m.precision),
                    _fmt(m.recall),
                    _fmt(m.f1),
                    str(m.coverage_count),
                    _fmt(m.coverage_fraction),
                    str(m.positive_count),
                    _fmt(e.reward),
                    e.translation,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _search_report_text(jobs, skipped) -> str:
    lines = ["search-report-format: 1"]
    for jr in jobs:
        r = jr.report
        lines += [
            "",
            f"[job {jr.name}]",
            f"rollouts: {r.rollouts}",
            f"tree-size: {r.tree_size}",
            f"terminal-threshold-hits: {r.terminal_counts.get('threshold', 0)}",
            f"terminal-max-length-hits: {r.terminal_counts.get('max_length', 0)}",
            f"terminal-exhausted: {r.terminal_counts.get('exhausted', 0)}",
            f"harvested: {len(r.harvested)}",
            f"kept-after-cleaning: {len(jr.kept)}",
        ]
        for d in r.diagnostics:
            lines.append(f"diagnostic: {d}")
    for s in skipped:
        lines.append(f"skipped: {s}")
    return "\n".join(lines) + "\n"


def _load_config(args, require_dataset: bool = False) -> RunConfig:
    overrides = {
        "output_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "profile": getattr(args, "profile", None),
        "dataset_path": getattr(args, "dataset", None),
        "dataset_kind": getattr(args, "kind", None),
        "search.total_rollouts": getattr(args, "rollouts", None),
    }
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    if args.config:
        config = load_config(args.config, overrides)
    else:
        raw = {k: v for k, v in overrides.items() if v is not None and "." not in k}
        search = {
            k.split(".", 1)[1]: v
            for k, v in overrides.items()
            if v is not None and k.startswith("search.")
        }
        if search:
            raw["search"] = search
        config = config_from_dict(raw)
    if require_dataset and not config.dataset_path:
        raise ConfigError("a dataset path is required (flag --dataset or config)")
    return config


def _finish(
    command: str,
    config: RunConfig,
    out: Path,
    durations: dict,
    inputs: Sequence[str] = (),
    args: dict | None = None,
) -> None:
    manifest = RunManifest(
        command=command,
        config={"run": config.to_dict(), "args": args or {}},
        durations=durations,
    )
    for p in inputs:
        if p and Path(p).is_file():
            manifest.add_input(p)
    manifest.add_artifacts(out)
    manifest.write(out)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_mine(args) -> int:
    config = _load_config(args, require_dataset=True)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = pipeline.mine_run(config)
    mined = time.perf_counter() - t0
    save_rulebook(result.rulebook, out / "rulebook.txt")
    _write(out / "rules.tsv", _rules_tsv(result.rulebook))
    _write(out / "search_report.txt", _search_report_text(result.jobs, result.skipped))
    if config.figures:
        plots.rules_overview_figure(result.rulebook.entries, out / "rules_overview.png")
    _finish(
        "mine", config, out,
        durations={"mine_seconds": mined},
        inputs=[config.dataset_path],
    )
    print(f"mined {len(result.rulebook.entries)} rules -> {out / 'rulebook.txt'}")
    for s in result.skipped:
        print(f"note: skipped {s}")
    return 0


def _eval_tsv(result) -> str:
    cols = [
        "key", "target", "coverage_count", "positive_count", "precision",
        "recall", "f1", "translation",
    ]
    lines = ["\t".join(cols)]
    for row in [*result.rows, result.pooled]:
        lines.append(
            "\t".join(
                [
                    row.key, row.target, str(row.coverage_count),
                    str(row.positive_count), _fmt(row.precision),
                    _fmt(row.recall), _fmt(row.f1), row.translation,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def cmd_eval_rules(args) -> int:
    config = _load_config(args, require_dataset=True)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    book = load_rulebook(args.rulebook)
    dataset = pipeline.load_dataset(config)
    t0 = time.perf_counter()
    result = pipeline.eval_rulebook(book, dataset)
    _write(out / "rule_metrics.tsv", _eval_tsv(result))
    if config.figures:
        rows = [*result.rows, result.pooled]
        plots.rule_metrics_figure(
            [r.key for r in rows],
            [r.precision for r in rows],
            [r.recall for r in rows],
            [r.f1 for r in rows],
            out / "rule_metrics.png",
        )
    _finish(
        "eval-rules", config, out,
        durations={"eval_seconds": time.perf_counter() - t0},
        inputs=[config.dataset_path, args.rulebook],
        args={"rulebook": args.rulebook},
    )
    p = result.pooled
    print(
        f"pooled classifier: precision {p.precision:.4f} recall {p.recall:.4f} "
        f"f1 {p.f1:.4f} over {len(result.rows)} rules"
    )
    return 0


def _scored_tsv(scored, set_name: str) -> list[str]:
    return [
        "\t".join(
            [
                set_name, sr.key, str(len(sr.rule.body)), _fmt(sr.reward),
                _fmt(sr.metrics.precision), str(sr.metrics.coverage_count),
            ]
        )
        for sr in scored
    ]


def cmd_oracle_check(args) -> int:
    config = _load_config(args, require_dataset=True)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = pipeline.oracle_check(config)
    lines = ["set\tkey\tbody_size\treward\tprecision\tcoverage_count"]
    lines += _scored_tsv(result.qualifying_pruned, "oracle-qualifying")
    lines += _scored_tsv(result.harvest_pruned, "search-harvest")
    _write(out / "oracle_sets.tsv", "\n".join(lines) + "\n")
    report = [
        "oracle-check-format: 1",
        f"enumerated-bodies: {result.oracle.enumeration_count}",
        f"qualifying: {len(result.oracle.qualifying)}",
        f"qualifying-after-prune: {len(result.qualifying_pruned)}",
        f"harvested: {len(result.report.harvested)}",
        f"harvest-after-cleaning: {len(result.harvest_kept)}",
        f"harvest-after-prune: {len(result.harvest_pruned)}",
        f"search-recall: {result.recall!r}",
    ]
    _write(out / "oracle_report.txt", "\n".join(report) + "\n")
    if config.figures:
        plots.oracle_overview_figure(
            [sr.reward for sr in result.oracle.qualifying],
            [sr.reward for sr in result.harvest_kept],
            result.recall,
            out / "oracle_overview.png",
        )
    _finish(
        "oracle-check", config, out,
        durations={"oracle_seconds": time.perf_counter() - t0},
        inputs=[config.dataset_path],
    )
    print(f"search recall vs oracle: {result.recall:.4f}")
    return 0


def cmd_gridworld(args) -> int:
    config = _load_config(args)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    durations: dict = {}
    inputs: list[str] = [config.map_path or ""]
    cli_args: dict = {"subcommand": args.gw_command}

    if args.gw_command == "collect":
        t0 = time.perf_counter()
        episodes = pipeline.gridworld_collect(config)
        _write(out / "episodes.log", gw.dump_episodes(episodes))
        targets = list(config.gridworld_targets) or list(gw.GRIDWORLD_TARGETS)
        pipeline.write_gridworld_datasets(episodes, out / "datasets", targets)
        durations["collect_seconds"] = time.perf_counter() - t0
        wins = sum(1 for e in episodes if e.outcome == "win")
        print(f"collected {len(episodes)} episodes ({wins} wins) -> {out}")
    elif args.gw_command == "mine":
        episodes = None
        if args.episodes_log:
            episodes = pipeline.episodes_from_log(
                config, Path(args.episodes_log).read_text()
            )
            inputs.append(args.episodes_log)
            cli_args["episodes_log"] = args.episodes_log
        t0 = time.perf_counter()
        result = pipeline.gridworld_mine(config, episodes)
        durations["mine_seconds"] = time.perf_counter() - t0
        save_rulebook(result.rulebook, out / "rulebook.txt")
        _write(out / "rules.tsv", _rules_tsv(result.rulebook))
        _write(
            out / "search_report.txt",
            _search_report_text(result.jobs, result.skipped),
        )
        if config.figures:
            plots.rules_overview_figure(
                result.rulebook.entries, out / "rules_overview.png"
            )
        print(f"mined {len(result.rulebook.entries)} rules -> {out / 'rulebook.txt'}")
        for s in result.skipped:
            print(f"note: skipped {s}")
    elif args.gw_command == "eval":
        book = None
        if args.rulebook:
            book = load_rulebook(args.rulebook)
            inputs.append(args.rulebook)
            cli_args["rulebook"] = args.rulebook
        elif args.grounded:
            book = gw.handcrafted_rulebook()
            cli_args["grounded"] = True
        else:
            cli_args["empty"] = True
        t0 = time.perf_counter()
        result = pipeline.gridworld_eval(config, book, noise=args.noise)
        durations["eval_seconds"] = time.perf_counter() - t0
        cli_args["noise"] = args.noise
        lines = ["episode\tseed\tlength\treward\toutcome"]
        for r in result.rows:
            lines.append(f"{r.episode}\t{r.seed}\t{r.length}\t{r.reward!r}\t{r.outcome}")
        _write(out / "eval.tsv", "\n".join(lines) + "\n")
        _write(
            out / "eval_summary.txt",
            "gridworld-eval-format: 1\n"
            f"episodes: {len(result.rows)}\n"
            f"AR: {result.ar!r}\nAL: {result.al!r}\nWR: {result.wr!r}\n",
        )
        if config.figures:
            plots.episode_returns_figure(
                [r.reward for r in result.rows],
                [r.length for r in result.rows],
                out / "episode_returns.png",
            )
        print(f"AR {result.ar:.2f}  AL {result.al:.2f}  WR {result.wr:.2f}")
    else:  # pragma: no cover - argparse prevents this
        raise ConfigError(f"unknown gridworld subcommand {args.gw_command!r}")

    _finish(
        f"gridworld {args.gw_command}", config, out,
        durations=durations,
        inputs=[p for p in inputs if p],
        args=cli_args,
    )
    return 0


def cmd_augment(args) -> int:
    config = _load_config(args)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    book = load_rulebook(args.rulebook)
    template = (
        load_template(args.template or config.template_path)
        if (args.template or config.template_path)
        else pipeline.default_template_text()
    )
    task_input = Path(args.input).read_text()
    lexicon = pipeline.resolve_lexicon(config.lexicon_path)

    if args.retrieve:
        entries = retrieve_rules(task_input, book, k=args.retrieve)
        rules_text = "\n".join(
            f"{i}. {e.translation}" for i, e in enumerate(entries, start=1)
        ) or "no known patterns"
    else:
        rules_text = render_rulebook(book, lexicon=None, allow_empty=True)

    bundle = assemble_prompt(template, rules_text, task_input)
    if args.budget_tokens and bundle.length_tokens_estimate > args.budget_tokens:
        print(
            f"warning: prompt estimate {bundle.length_tokens_estimate} tokens "
            f"exceeds the budget of {args.budget_tokens}; consider --retrieve",
            file=sys.stderr,
        )
    _write(out / "prompt.txt", bundle.rendered)
    reply = ""
    if args.mode == "remote":
        endpoint = ChatEndpoint(
            EndpointConfig(**config.advisor_endpoint) if config.advisor_endpoint else EndpointConfig(),
            capture_dir=config.advisor_capture_dir,
            replay_dir=config.advisor_replay_dir,
        )
        reply = endpoint.complete(
            [{"role": "user", "content": bundle.rendered}], tag="augment"
        )
        _write(out / "reply.txt", reply)
    _finish(
        "augment", config, out,
        durations={},
        inputs=[args.rulebook, args.input]
        + ([args.template] if args.template else []),
        args={
            "rulebook": args.rulebook,
            "template": args.template,
            "input": args.input,
            "mode": args.mode,
            "retrieve": args.retrieve,
            "budget_tokens": args.budget_tokens,
        },
    )
    print(
        f"prompt: {bundle.length_chars} chars "
        f"(~{bundle.length_tokens_estimate} tokens) -> {out / 'prompt.txt'}"
    )
    if reply:
        print(reply)
    return 0


def cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    config_dict = dict(manifest["config"]["run"])
    cli_args = dict(manifest["config"].get("args", {}))
    out = args.out or config_dict["output_dir"] + "-rerun"
    config_dict["output_dir"] = out

    command = manifest["command"]
    ns = argparse.Namespace(
        config=None, out=None, seed=None, profile=None, dataset=None,
        kind=None, rollouts=None, no_figures=False,
    )
    # Re-execute through the same command function with the snapshot config.
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(config_dict, fh)
        snapshot = fh.name
    ns.config = snapshot
    try:
        if command == "mine":
            cmd_mine(ns)
        elif command == "eval-rules":
            ns.rulebook = cli_args["rulebook"]
            cmd_eval_rules(ns)
        elif command == "oracle-check":
            cmd_oracle_check(ns)
        elif command.startswith("gridworld"):
            ns.gw_command = cli_args["subcommand"]
            ns.rulebook = cli_args.get("rulebook")
            ns.grounded = cli_args.get("grounded", False)
            ns.noise = cli_args.get("noise", 0.05)
            ns.episodes_log = cli_args.get("episodes_log")
            cmd_gridworld(ns)
        elif command == "augment":
            ns.rulebook = cli_args["rulebook"]
            ns.template = cli_args.get("template")
            ns.input = cli_args["input"]
            ns.mode = cli_args.get("mode", "dry")
            ns.retrieve = cli_args.get("retrieve")
            ns.budget_tokens = cli_args.get("budget_tokens")
            cmd_augment(ns)
        else:
            raise ConfigError(f"manifest carries unknown command {command!r}")
    finally:
        Path(snapshot).unlink(missing_ok=True)

    outcome = compare_artifacts(manifest, out)
    for rel, ok in outcome.items():
        print(f"{'identical' if ok else 'MISMATCH'}\t{rel}")
    if all(outcome.values()):
        print(f"rerun reproduced {len(outcome)} artifacts byte-identically")
        return 0
    return 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulemine",
        description="Distill labeled data into logic rules with MCTS and "
        "assemble rule-augmented prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine a rulebook from a dataset")
    _add_common(p)
    p.add_argument("--dataset", help="dataset path (overrides config)")
    p.add_argument("--kind", choices=["tabular", "sequence"], help="dataset kind")
    p.add_argument("--profile", choices=["relation", "anomaly", "abuse", "gridworld"])
    p.add_argument("--rollouts", type=int, help="override total rollouts")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("eval-rules", help="evaluate a rulebook on a dataset split")
    _add_common(p)
    p.add_argument("--rulebook", required=True)
    p.add_argument("--dataset", help="dataset path (overrides config)")
    p.add_argument("--kind", choices=["tabular", "sequence"])
    p.set_defaults(func=cmd_eval_rules)

    p = sub.add_parser("oracle-check", help="exhaustive enumeration vs the search")
    _add_common(p)
    p.add_argument("--dataset", help="dataset path (overrides config)")
    p.add_argument("--kind", choices=["tabular", "sequence"])
    p.add_argument("--rollouts", type=int)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("gridworld", help="cooperative gridworld pipeline")
    p.add_argument("gw_command", choices=["collect", "mine", "eval"])
    _add_common(p)
    p.add_argument("--rulebook", help="(eval) rulebook to drive the agent")
    p.add_argument("--grounded", action="store_true", help="(eval) handcrafted rulebook")
    p.add_argument("--noise", type=float, default=0.05, help="(eval) action noise rate")
    p.add_argument("--episodes-log", help="(mine) reuse a recorded episode log")
    p.set_defaults(func=cmd_gridworld)

    p = sub.add_parser("augment", help="assemble a rule-augmented prompt")
    _add_common(p)
    p.add_argument("--rulebook", required=True)
    p.add_argument("--template", help="prompt template file")
    p.add_argument("--input", required=True, help="task input file")
    p.add_argument("--mode", choices=["dry", "remote"], default="dry")
    p.add_argument("--retrieve", type=int, help="retrieve top-k rules instead of all")
    p.add_argument(
        "--budget-tokens", type=int,
        help="warn when the prompt's token estimate exceeds this budget",
    )
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("rerun", help="re-execute a manifest and verify artifacts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory for the rerun")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single stage-tagged exit point
        print(f"error [{_stage_of(exc)}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
