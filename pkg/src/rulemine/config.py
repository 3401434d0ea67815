"""Run configuration, task profiles and seed derivation.

Task profiles bundle per-task search defaults (rollouts,
reward metric, maximum body predicates, terminal threshold); individual
fields can be overridden per run. All randomness flows from the single
config seed through :func:`derive_seed` (stage name + index), so stages
reproduce even when run selectively.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .mcts import SearchConfig


class ConfigError(ValueError):
    """Raised when a run configuration fails validation."""


#: Search-side defaults per task profile: total rollouts, reward metric,
#: maximum body predicates and the precision terminal threshold.
PROFILES: dict[str, dict] = {
    "relation": {
        "total_rollouts": 500,
        "reward_metric": "precision",
        "max_body_predicates": 2,
        "terminal_reward_threshold": 0.9,
        "terminal_metric": "precision",
    },
    "anomaly": {
        "total_rollouts": 500,
        "reward_metric": "f1",
        "max_body_predicates": 5,
        "terminal_reward_threshold": 0.9,
        "terminal_metric": "precision",
    },
    "abuse": {
        "total_rollouts": 500,
        "reward_metric": "f1",
        "max_body_predicates": 5,
        "terminal_reward_threshold": 0.85,
        "terminal_metric": "precision",
    },
    "gridworld": {
        "total_rollouts": 500,
        "reward_metric": "precision_plus_recall",
        "max_body_predicates": 10,
        "terminal_reward_threshold": 1.0,
        "terminal_metric": "precision",
    },
}

#: Generation-side defaults of the remote client, shared by every profile.
GENERATION_DEFAULTS = {
    "max_tokens": 1000,
    "temperature": 0.0,
    "top_p": 1.0,
    "frequency_penalty": 0.0,
    "presence_penalty": 0.0,
}

ADVISOR_MODES = ("identity", "heuristic", "remote")


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Deterministic per-stage seed: sha256 over (master, stage, index)."""
    digest = hashlib.sha256(f"{master}:{stage}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class RunConfig:
    """One command's full configuration; see README for the file format."""

    dataset_path: str = ""
    dataset_kind: str = "tabular"  # tabular | sequence
    delimiter: str = ","
    label_column: str = "label"
    target_label: str | None = None  # display name of the boolean label target
    target_class: str | None = None
    schema_overrides: dict = field(default_factory=dict)
    discretization_bins: int = 10
    profile: str | None = None
    advisor_mode: str = "identity"
    advisor_endpoint: dict = field(default_factory=dict)
    advisor_retries: int = 2
    advisor_fail_open: bool = True
    advisor_capture_dir: str | None = None
    advisor_replay_dir: str | None = None
    task_name: str = ""
    task_description: str = ""
    search: SearchConfig = field(default_factory=SearchConfig)
    min_reward: float | None = None
    min_coverage_count: int = 5
    oracle_budget: int = 1_000_000
    lexicon_path: str | None = None
    template_path: str | None = None
    output_dir: str = "out"
    seed: int = 0
    figures: bool = True
    # gridworld-only knobs
    map_path: str | None = None
    optimal_policy_probability: float = 0.7
    episodes: int = 1000
    eval_episodes: int = 30
    gridworld_targets: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.dataset_kind not in ("tabular", "sequence"):
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.advisor_mode not in ADVISOR_MODES:
            raise ConfigError(f"unknown advisor mode {self.advisor_mode!r}")
        if self.discretization_bins < 2:
            raise ConfigError("discretization_bins must be >= 2")
        if not 0.0 <= self.optimal_policy_probability <= 1.0:
            raise ConfigError("optimal_policy_probability must be in [0, 1]")
        if self.episodes < 1 or self.eval_episodes < 1:
            raise ConfigError("episode counts must be positive")
        if self.min_coverage_count < 0:
            raise ConfigError("min_coverage_count must be >= 0")

    @property
    def cleaning_min_reward(self) -> float:
        # Default cleaning threshold follows the task's terminal threshold.
        if self.min_reward is not None:
            return self.min_reward
        return self.search.terminal_reward_threshold

    def to_dict(self) -> dict:
        d = copy.deepcopy(self.__dict__)
        s = self.search
        d["search"] = {
            "total_rollouts": s.total_rollouts,
            "exploration_c": s.exploration_c,
            "max_body_predicates": s.max_body_predicates,
            "terminal_reward_threshold": s.terminal_reward_threshold,
            "reward_metric": s.reward_metric,
            "terminal_metric": s.terminal_metric,
            "min_support_to_expand": s.min_support_to_expand,
            "rng_seed": s.rng_seed,
        }
        return d


def _search_config(profile: str | None, overrides: Mapping) -> SearchConfig:
    base: dict = {
        "exploration_c": math.sqrt(2),
        "min_support_to_expand": 5,
    }
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}"
            )
        base.update(PROFILES[profile])
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SearchConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid search configuration: {exc}") from exc


def config_from_dict(raw: Mapping) -> RunConfig:
    """Build and validate a RunConfig from a plain mapping."""
    data = dict(raw)
    profile = data.get("profile")
    search_overrides = dict(data.pop("search", {}))
    search = _search_config(profile, search_overrides)
    known = {f for f in RunConfig.__dataclass_fields__ if f != "search"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
    try:
        return RunConfig(search=search, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, overrides: Mapping | None = None) -> RunConfig:
    """Load a JSON run configuration; ``overrides`` win field by field."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key.startswith("search."):
                raw.setdefault("search", {})[key.split(".", 1)[1]] = value
            else:
                raw[key] = value
    return config_from_dict(raw)
