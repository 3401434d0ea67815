"""End-to-end flows behind the CLI: ingest, formulate, search, clean,
translate, evaluate.

Each flow is a plain function from a validated :class:`RunConfig` (plus
in-memory inputs where applicable) to result objects; the CLI adds argument
parsing, file writing and manifests on top. Stages derive their RNG seeds
from the single config seed by stage name and index, so reruns and partial
runs reproduce exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import gridworld as gw
from .advisor import (
    EndpointConfig,
    SearchJob,
    TaskDescription,
    make_advisor,
    propose_targets,
)
from .config import RunConfig, derive_seed
from .dataset import (
    DatasetError,
    PredicateMatrix,
    PredicateSpaceBuilder,
    SequenceDataset,
    TabularDataset,
    build_matrix,
    load_sequences,
    load_tabular,
    predicate_from_def,
    sequence_predicates,
)
from .mcts import SearchReport, search
from .oracle import OracleReport, enumerate_rules, search_recall
from .rules import (
    Rulebook,
    RulebookEntry,
    ScoredRule,
    clean_rules,
    dominance_prune,
    make_entry,
    merged_body_defs,
    metrics_from_columns,
    sort_scored,
)
from .translate import Lexicon, load_lexicon, translate_rule

log = logging.getLogger(__name__)

BUILTIN_LEXICONS = ("default", "anomaly")


def resolve_lexicon(spec: str | None) -> Lexicon:
    """A lexicon path, a builtin name ('default', 'anomaly'), or None."""
    if spec is None or spec in BUILTIN_LEXICONS:
        name = f"{spec or 'default'}_lexicon.txt"
        with resources.as_file(resources.files("rulemine.data").joinpath(name)) as p:
            return load_lexicon(p)
    return load_lexicon(spec)


def default_template_text() -> str:
    from .translate import load_template

    with resources.as_file(
        resources.files("rulemine.data").joinpath("default_template.txt")
    ) as p:
        return load_template(p)


def _advisor_from_config(config: RunConfig):
    endpoint = EndpointConfig(**config.advisor_endpoint) if config.advisor_endpoint else EndpointConfig()
    return make_advisor(
        config.advisor_mode,
        endpoint_config=endpoint,
        capture_dir=config.advisor_capture_dir,
        replay_dir=config.advisor_replay_dir,
        retries=config.advisor_retries,
        fail_open=config.advisor_fail_open,
    )


def _task_from_config(config: RunConfig, dataset_summary: str) -> TaskDescription:
    return TaskDescription(
        name=config.task_name or (config.profile or "rule mining"),
        description=config.task_description or "mine logic rules from the dataset",
        schema_summary=dataset_summary,
        label_semantics=f"label column {config.label_column!r}",
    )


def load_dataset(config: RunConfig) -> Union[TabularDataset, SequenceDataset]:
    """Ingest per config; a JSON schema sidecar next to the file wins over
    inference but is overridden by explicit config entries."""
    path = Path(config.dataset_path)
    if config.dataset_kind == "sequence":
        return load_sequences(path)
    overrides = {}
    sidecar = path.with_suffix(path.suffix + ".schema.json")
    if sidecar.exists():
        overrides.update(json.loads(sidecar.read_text()).get("features", {}))
    overrides.update(config.schema_overrides)
    return load_tabular(
        path,
        delimiter=config.delimiter,
        label_column=config.label_column,
        schema_overrides=overrides,
    )


# ---------------------------------------------------------------------------
# mine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JobResult:
    name: str
    report: SearchReport
    kept: tuple[ScoredRule, ...]


@dataclass(frozen=True)
class MineResult:
    rulebook: Rulebook
    jobs: tuple[JobResult, ...]
    skipped: tuple[str, ...]


def _label_targets(dataset: TabularDataset | SequenceDataset, config: RunConfig):
    labels = [s.label for s in dataset.samples]
    if all(isinstance(l, bool) for l in labels):
        name = config.target_label or "label"
        return [(name, np.asarray(labels, dtype=bool))]
    classes = sorted({str(l) for l in labels})
    wanted = config.target_class
    if wanted is None:
        raise DatasetError(
            "dataset labels are classes; set target_class to one of "
            f"{classes} or 'all'"
        )
    chosen = classes if wanted == "all" else [wanted]
    unknown = set(chosen) - set(classes)
    if unknown:
        raise DatasetError(f"target_class not in data: {sorted(unknown)}")
    return [
        (f"class:{c}", np.asarray([str(l) == c for l in labels], dtype=bool))
        for c in chosen
    ]


def _run_jobs(
    matrix: PredicateMatrix,
    jobs: Sequence[SearchJob],
    config: RunConfig,
    lexicon: Lexicon,
    job_offset: int,
    ordered_names: bool = False,
) -> tuple[list[RulebookEntry], list[JobResult], list[str]]:
    entries: list[RulebookEntry] = []
    results: list[JobResult] = []
    skipped: list[str] = []
    for j, job in enumerate(jobs):
        positives = int(job.target.sum())
        if positives == 0:
            skipped.append(f"{job.name}: no positive samples")
            continue
        job_config = dataclasses.replace(
            config.search, rng_seed=derive_seed(config.seed, "search", job_offset + j)
        )
        report = search(
            matrix,
            job_config,
            target=job.target,
            allowed_ids=job.allowed_ids,
            target_name=job.name,
        )
        kept = dominance_prune(
            clean_rules(
                sort_scored(report.harvested),
                config.cleaning_min_reward,
                config.min_coverage_count,
            )
        )
        kept = sort_scored(kept)
        for sr in kept:
            text = translate_rule(
                merged_body_defs(sr.rule, matrix.predicates),
                sr.rule.target,
                sr.metrics,
                lexicon,
            )
            entries.append(make_entry(sr, matrix.predicates, text))
        results.append(JobResult(job.name, report, tuple(kept)))
    return entries, results, skipped


def mine_run(config: RunConfig) -> MineResult:
    """The full mine pipeline on a tabular or sequence dataset."""
    dataset = load_dataset(config)
    lexicon = resolve_lexicon(config.lexicon_path)
    advisor = _advisor_from_config(config)

    entries: list[RulebookEntry] = []
    job_results: list[JobResult] = []
    skipped: list[str] = []
    fingerprint = ""
    job_offset = 0
    if isinstance(dataset, SequenceDataset):
        summary = f"{len(dataset.vocabulary)} events, {len(dataset)} sequences"
        predicates = sequence_predicates(dataset)
        matrix = build_matrix(dataset, predicates)
        fingerprint = matrix.fingerprint()
        advice = advisor.advise(_task_from_config(config, summary), matrix)
        jobs = propose_targets(
            advice, matrix, label_job_name=config.target_label or "label"
        )
        entries, job_results, skipped = _run_jobs(
            matrix, jobs, config, lexicon, job_offset
        )
    else:
        summary = ", ".join(f"{f.name}:{f.kind}" for f in dataset.schema)
        for label_name, label_col in _label_targets(dataset, config):
            # Supervised Gini bins are fit per target run.
            predicates = PredicateSpaceBuilder(
                dataset, n_bins=config.discretization_bins
            ).build(labels=label_col.tolist())
            matrix = build_matrix(dataset, predicates)
            matrix = PredicateMatrix(
                matrix.columns, label_col, matrix.predicates, matrix.sequences
            )
            if not fingerprint:
                fingerprint = matrix.fingerprint()
            advice = advisor.advise(_task_from_config(config, summary), matrix)
            jobs = propose_targets(advice, matrix, label_job_name=label_name)
            got_entries, got_results, got_skipped = _run_jobs(
                matrix, jobs, config, lexicon, job_offset
            )
            entries.extend(got_entries)
            job_results.extend(got_results)
            skipped.extend(got_skipped)
            job_offset += len(jobs)

    book = Rulebook(
        tuple(entries),
        metadata={
            "dataset_fingerprint": fingerprint,
            "dataset_path": str(config.dataset_path),
            "search_config": config.to_dict()["search"],
            "min_reward": config.cleaning_min_reward,
            "min_coverage_count": config.min_coverage_count,
            "seed": config.seed,
        },
    )
    return MineResult(book, tuple(job_results), tuple(skipped))


# ---------------------------------------------------------------------------
# eval-rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    key: str
    target: str
    translation: str
    coverage_count: int
    positive_count: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalResult:
    rows: tuple[EvalRow, ...]
    pooled: EvalRow


def eval_rulebook(book: Rulebook, dataset: TabularDataset | SequenceDataset) -> EvalResult:
    """Per-rule metrics against the split's labels, plus the pooled
    any-rule-matches classifier."""
    labels = np.asarray([bool(s.label) for s in dataset.samples], dtype=bool)
    samples = dataset.samples
    pooled = np.zeros(len(samples), dtype=bool)
    rows: list[EvalRow] = []
    bad: list[str] = []
    for entry in book.entries:
        try:
            col = np.asarray(
                [
                    all(
                        _eval_def(d, s) for d in entry.body_defs
                    )
                    for s in samples
                ],
                dtype=bool,
            )
        except DatasetError as exc:
            bad.append(f"{entry.key}: {exc}")
            continue
        pooled |= col
        m = metrics_from_columns(col, labels)
        rows.append(
            EvalRow(
                entry.key,
                entry.rule.target,
                entry.translation,
                m.coverage_count,
                m.positive_count,
                m.precision,
                m.recall,
                m.f1,
            )
        )
    if bad:
        raise DatasetError(
            "rulebook predicates do not fit this dataset: " + "; ".join(bad)
        )
    pm = metrics_from_columns(pooled, labels)
    pooled_row = EvalRow(
        "pooled", "any-rule", "predict positive iff any rule body matches",
        pm.coverage_count, pm.positive_count, pm.precision, pm.recall, pm.f1,
    )
    return EvalResult(tuple(rows), pooled_row)


def _eval_def(d: dict, sample) -> bool:
    from .dataset import evaluate_predicate

    return evaluate_predicate(predicate_from_def(d), sample)


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleCheckResult:
    oracle: OracleReport
    report: SearchReport
    harvest_kept: tuple[ScoredRule, ...]
    qualifying_pruned: tuple[ScoredRule, ...]
    harvest_pruned: tuple[ScoredRule, ...]
    recall: float


def oracle_check(config: RunConfig) -> OracleCheckResult:
    """Exhaustive enumeration vs one search run at the same thresholds."""
    dataset = load_dataset(config)
    if isinstance(dataset, SequenceDataset):
        predicates = sequence_predicates(dataset)
    else:
        predicates = PredicateSpaceBuilder(
            dataset, n_bins=config.discretization_bins
        ).build()
    matrix = build_matrix(dataset, predicates)
    sc = config.search
    oracle = enumerate_rules(
        matrix,
        max_len=sc.max_body_predicates,
        min_coverage=config.min_coverage_count,
        threshold=sc.terminal_reward_threshold,
        metric=sc.reward_metric,
        terminal_metric=sc.terminal_metric,
        budget=config.oracle_budget,
    )
    job_config = dataclasses.replace(
        sc, rng_seed=derive_seed(config.seed, "search", 0)
    )
    report = search(matrix, job_config)
    kept = clean_rules(
        sort_scored(report.harvested),
        config.cleaning_min_reward,
        config.min_coverage_count,
    )
    recall = search_recall(kept, oracle.qualifying)
    return OracleCheckResult(
        oracle=oracle,
        report=report,
        harvest_kept=tuple(kept),
        qualifying_pruned=tuple(sort_scored(dominance_prune(oracle.qualifying))),
        harvest_pruned=tuple(sort_scored(dominance_prune(kept))),
        recall=recall,
    )


# ---------------------------------------------------------------------------
# gridworld
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridMineResult:
    rulebook: Rulebook
    jobs: tuple[JobResult, ...]
    skipped: tuple[str, ...]
    episodes: tuple[gw.Episode, ...]


def grid_config(config: RunConfig) -> gw.GridConfig:
    if config.map_path:
        return gw.GridConfig.load(config.map_path)
    return gw.default_map()


def gridworld_collect(config: RunConfig) -> list[gw.Episode]:
    return gw.collect_trajectories(
        grid_config(config),
        p=config.optimal_policy_probability,
        n_episodes=config.episodes,
        seed=derive_seed(config.seed, "collect", 0),
    )


def gridworld_mine(
    config: RunConfig, episodes: Sequence[gw.Episode] | None = None
) -> GridMineResult:
    """Collect (or reuse) trajectories, then mine rules per target kind."""
    episodes = list(episodes) if episodes is not None else gridworld_collect(config)
    lexicon = resolve_lexicon(config.lexicon_path)
    advisor = _advisor_from_config(config)
    targets = list(config.gridworld_targets) or list(gw.GRIDWORLD_TARGETS)

    entries: list[RulebookEntry] = []
    job_results: list[JobResult] = []
    skipped: list[str] = []
    for j, target_kind in enumerate(targets):
        dataset = gw.episodes_to_dataset(episodes, target_kind)
        predicates = PredicateSpaceBuilder(dataset).build()
        matrix = build_matrix(dataset, predicates)
        positives = int(matrix.target.sum())
        if positives == 0:
            skipped.append(f"{target_kind}: no positive samples")
            continue
        task = _task_from_config(
            config, f"gridworld step features, target {target_kind}"
        )
        advice = advisor.advise(task, matrix)
        jobs = [
            SearchJob(
                target_kind,
                matrix.target,
                tuple(
                    pid
                    for pid in range(matrix.n_predicates)
                    if pid not in advice.excluded_body_ids
                ),
            )
        ]
        got_entries, got_results, got_skipped = _run_jobs(
            matrix, jobs, config, lexicon, job_offset=j
        )
        entries.extend(got_entries)
        job_results.extend(got_results)
        skipped.extend(got_skipped)

    book = Rulebook(
        tuple(entries),
        metadata={
            "map": gw.MAP_VERSION if not config.map_path else str(config.map_path),
            "episodes": len(episodes),
            "p": config.optimal_policy_probability,
            "search_config": config.to_dict()["search"],
            "min_reward": config.cleaning_min_reward,
            "min_coverage_count": config.min_coverage_count,
            "seed": config.seed,
        },
    )
    return GridMineResult(book, tuple(job_results), tuple(skipped), tuple(episodes))


def gridworld_eval(
    config: RunConfig, book: Rulebook | None, noise: float = 0.05
) -> gw.GridEvalResult:
    """Evaluate the scripted rule agent (empty book when ``book`` is None)."""
    cfg = grid_config(config)
    rulebook = book if book is not None else Rulebook((), {"map": gw.MAP_VERSION})
    policy = gw.scripted_rule_agent(rulebook, cfg)
    return gw.evaluate_policy(
        policy,
        cfg,
        n_episodes=config.eval_episodes,
        seed=derive_seed(config.seed, "eval", 0),
        noise=noise,
    )


def write_gridworld_datasets(
    episodes: Sequence[gw.Episode], out_dir: Union[str, Path], targets: Sequence[str]
) -> list[Path]:
    """Delimited dataset per target, with a JSON schema sidecar each."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for target_kind in targets:
        dataset = gw.episodes_to_dataset(episodes, target_kind)
        name = target_kind.replace(":", "_")
        path = out / f"{name}.csv"
        names = dataset.schema.names
        lines = [",".join([*names, "label"])]
        for s in dataset.samples:
            cells = []
            for fname in names:
                v = s.values[fname]
                cells.append("1" if v is True else "0" if v is False else str(v))
            cells.append("1" if s.label else "0")
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        sidecar = path.with_suffix(path.suffix + ".schema.json")
        sidecar.write_text(
            json.dumps(
                {"features": {f.name: f.kind for f in dataset.schema}, "label": target_kind},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        written.extend([path, sidecar])
    return written


def episodes_from_log(config: RunConfig, text: str) -> list[gw.Episode]:
    """Rebuild full episodes by replaying a recorded action log."""
    cfg = grid_config(config)
    episodes: list[gw.Episode] = []
    for actions in gw.load_episode_actions(text):
        env = gw.GridWorld(cfg)
        records = []
        for joint in actions:
            pre = env.observations()
            t = env.step(joint)
            records.append(
                gw.StepRecord(
                    pre_obs=pre,
                    actions=joint,
                    reward=t.reward,
                    post_standing=(
                        env.cell_color(env.positions[0]),
                        env.cell_color(env.positions[1]),
                    ),
                    won=env.outcome == "win" and env.done,
                )
            )
        episodes.append(gw.Episode(0, tuple(records), env.outcome, env.total_reward))
    return episodes
