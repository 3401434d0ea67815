"""Search formulation behind an advisor interface.

An advisor looks at the task description and the predicate registry and
returns advice: body predicates to exclude and extra target predicates to
search. Three implementations ship: an identity stub (no changes), a
heuristic stub (drops predicates that never co-occur with the target) and a
remote chat-completion client that parses a fenced, line-oriented reply.
Whatever the advisor, the rest of the pipeline runs unchanged on the
reduced registry and job list.

Remote calls are blocking; advisor failure degrades to identity advice by
default ("fail open") so a mining run never dies on a flaky endpoint.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests

from .dataset import PredicateMatrix

log = logging.getLogger(__name__)

ADVICE_BEGIN = "---BEGIN ADVICE---"
ADVICE_END = "---END ADVICE---"


class AdvisorError(RuntimeError):
    """Raised when remote advice cannot be obtained and fail-open is off."""


@dataclass(frozen=True)
class TaskDescription:
    name: str
    description: str
    schema_summary: str = ""
    label_semantics: str = ""

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError("task description must be non-empty")


@dataclass(frozen=True)
class FormulationAdvice:
    """Validated advice: ids refer to the registry it was produced for."""

    excluded_body_ids: frozenset[int] = frozenset()
    proposed_target_ids: tuple[int, ...] = ()
    rationale: tuple[str, ...] = ()

    def validate(self, matrix: PredicateMatrix) -> None:
        known = range(matrix.n_predicates)
        for pid in self.excluded_body_ids:
            if pid not in known:
                raise ValueError(f"excluded id {pid} not in the predicate registry")
        for pid in self.proposed_target_ids:
            if pid not in known:
                raise ValueError(f"proposed target id {pid} not in the registry")


class Advisor(Protocol):
    def advise(self, task: TaskDescription, matrix: PredicateMatrix) -> FormulationAdvice:
        ...


class IdentityAdvisor:
    """No exclusions, no extra targets."""

    def advise(self, task: TaskDescription, matrix: PredicateMatrix) -> FormulationAdvice:
        return FormulationAdvice()


class HeuristicAdvisor:
    """Excludes predicates with zero co-occurrence with the target.

    Sound: a body containing such a predicate covers no positive sample, so
    no rule using it can have precision above zero for this target.
    """

    def advise(self, task: TaskDescription, matrix: PredicateMatrix) -> FormulationAdvice:
        cooc = (matrix.columns & matrix.target[:, None]).sum(axis=0)
        excluded = frozenset(int(i) for i in np.flatnonzero(cooc == 0))
        rationale = tuple(
            f"excluded {matrix.predicates[i].display}: never co-occurs with the target"
            for i in sorted(excluded)
        )
        return FormulationAdvice(excluded_body_ids=excluded, rationale=rationale)


def filter_body_predicates(
    advice: FormulationAdvice, matrix: PredicateMatrix
) -> tuple[int, ...]:
    """Registry minus the excluded ids; logs the reduction fraction."""
    advice.validate(matrix)
    allowed = tuple(
        pid for pid in range(matrix.n_predicates) if pid not in advice.excluded_body_ids
    )
    if not allowed:
        raise ValueError("advice would exclude every body predicate")
    removed = matrix.n_predicates - len(allowed)
    log.info(
        "advisor excluded %d of %d predicates (%.1f%%)",
        removed,
        matrix.n_predicates,
        100.0 * removed / matrix.n_predicates,
    )
    return allowed


@dataclass(frozen=True)
class SearchJob:
    """One search to run: a target column plus the candidate body ids."""

    name: str
    target: np.ndarray
    allowed_ids: tuple[int, ...]


def propose_targets(
    advice: FormulationAdvice,
    matrix: PredicateMatrix,
    label_job_name: str = "label",
) -> list[SearchJob]:
    """One job per proposed target predicate, after the original label job.

    A proposed target's own predicate (and its same-feature siblings) is
    removed from that job's body candidates; duplicates deduplicate by id.
    """
    advice.validate(matrix)
    allowed = filter_body_predicates(advice, matrix)
    jobs = [SearchJob(label_job_name, matrix.target, allowed)]
    seen: set[int] = set()
    features = matrix.feature_of
    for tid in advice.proposed_target_ids:
        if tid in seen:
            continue
        seen.add(tid)
        pred = matrix.predicates[tid]
        body_ids = tuple(
            pid for pid in allowed if pid != tid and features[pid] != pred.feature
        )
        jobs.append(
            SearchJob(f"target:{pred.display}", matrix.columns[:, tid].copy(), body_ids)
        )
    return jobs


# ---------------------------------------------------------------------------
# Remote chat-completion client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = ""
    model: str = ""
    api_key_env: str = "RULEMINE_API_KEY"
    max_tokens: int = 1000
    temperature: float = 0.0
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    timeout: float = 30.0
    retries: int = 2


class TransportError(AdvisorError):
    """Network or protocol failure after all retries, with the diagnostic."""


def _default_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class ChatEndpoint:
    """Blocking chat-completion client with retries and transcript capture.

    When ``replay_dir`` is set, requests are answered from recorded
    transcripts instead of the network; with ``capture_dir`` set, each
    live request/response pair is persisted as a text file named by tag.
    """

    def __init__(
        self,
        config: EndpointConfig,
        capture_dir: str | Path | None = None,
        replay_dir: str | Path | None = None,
        transport: Callable[[str, dict, dict, float], dict] | None = None,
    ):
        self.config = config
        self.capture_dir = Path(capture_dir) if capture_dir else None
        self.replay_dir = Path(replay_dir) if replay_dir else None
        self.transport = transport or _default_transport

    def _payload(self, messages: list[dict]) -> dict:
        c = self.config
        return {
            "model": c.model,
            "messages": messages,
            "max_tokens": c.max_tokens,
            "temperature": c.temperature,
            "top_p": c.top_p,
            "frequency_penalty": c.frequency_penalty,
            "presence_penalty": c.presence_penalty,
        }

    def complete(self, messages: list[dict], tag: str) -> str:
        payload = self._payload(messages)
        if self.replay_dir is not None:
            record = json.loads((self.replay_dir / f"{tag}.json").read_text())
            return record["response"]["choices"][0]["message"]["content"]

        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                data = self.transport(url, payload, headers, self.config.timeout)
                break
            except Exception as exc:  # noqa: BLE001 - transport diagnostics wanted
                last = exc
                if attempt < self.config.retries:
                    time.sleep(min(2.0**attempt, 8.0))
        else:
            raise TransportError(f"endpoint unreachable after retries: {last}")
        if self.capture_dir is not None:
            self.capture_dir.mkdir(parents=True, exist_ok=True)
            record = {"request": payload, "response": data}
            (self.capture_dir / f"{tag}.json").write_text(
                json.dumps(record, indent=2, sort_keys=True) + "\n"
            )
        return data["choices"][0]["message"]["content"]


ADVICE_PROMPT = """\
You formulate a logic-rule search over boolean predicates.

Task: {task_name}
{task_description}
Schema: {schema_summary}
Label semantics: {label_semantics}

Candidate body predicates (one per line):
{predicates}

Decide which predicates are impossible or irrelevant for predicting the
target, and which predicates are worth searching as additional targets.
Answer with one fenced block, one decision per line, using exactly:

{begin}
exclude: <predicate name>
target: <predicate name>
note: <free-text rationale>
{end}

Use only predicate names from the list. Emit no other text.
"""


def advice_messages(task: TaskDescription, matrix: PredicateMatrix) -> list[dict]:
    body = ADVICE_PROMPT.format(
        task_name=task.name,
        task_description=task.description,
        schema_summary=task.schema_summary or "(not provided)",
        label_semantics=task.label_semantics or "(not provided)",
        predicates="\n".join(p.display for p in matrix.predicates),
        begin=ADVICE_BEGIN,
        end=ADVICE_END,
    )
    return [{"role": "user", "content": body}]


def parse_advice(reply: str, matrix: PredicateMatrix) -> FormulationAdvice:
    """Strict parse of the fenced advice block.

    Missing fences, unknown directives or unknown predicate names all raise;
    the caller decides whether to retry or fail open.
    """
    try:
        start = reply.index(ADVICE_BEGIN) + len(ADVICE_BEGIN)
        end = reply.index(ADVICE_END, start)
    except ValueError as exc:
        raise ValueError("reply lacks the fenced advice block") from exc
    by_name = {p.display: p.id for p in matrix.predicates}
    excluded: set[int] = set()
    targets: list[int] = []
    notes: list[str] = []
    for raw in reply[start:end].splitlines():
        line = raw.strip()
        if not line:
            continue
        directive, _, value = line.partition(":")
        directive = directive.strip().lower()
        value = value.strip()
        if directive == "exclude":
            if value not in by_name:
                raise ValueError(f"exclude names unknown predicate {value!r}")
            excluded.add(by_name[value])
        elif directive == "target":
            if value not in by_name:
                raise ValueError(f"target names unknown predicate {value!r}")
            if by_name[value] not in targets:
                targets.append(by_name[value])
        elif directive == "note":
            notes.append(value)
        else:
            raise ValueError(f"unknown advice directive {directive!r}")
    advice = FormulationAdvice(
        excluded_body_ids=frozenset(excluded),
        proposed_target_ids=tuple(targets),
        rationale=tuple(notes),
    )
    advice.validate(matrix)
    return advice


class RemoteAdvisor:
    """LLM-backed advisor; malformed replies retry, then fail open."""

    def __init__(
        self,
        endpoint: ChatEndpoint,
        retries: int = 2,
        fail_open: bool = True,
    ):
        self.endpoint = endpoint
        self.retries = retries
        self.fail_open = fail_open

    def advise(self, task: TaskDescription, matrix: PredicateMatrix) -> FormulationAdvice:
        messages = advice_messages(task, matrix)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                reply = self.endpoint.complete(messages, tag=f"advice-{attempt}")
                return parse_advice(reply, matrix)
            except Exception as exc:  # noqa: BLE001 - fall through to fail-open
                last = exc
        if self.fail_open:
            log.warning("advisor failed (%s); falling back to identity advice", last)
            return FormulationAdvice()
        raise AdvisorError(f"remote advice failed: {last}")


def make_advisor(
    mode: str,
    endpoint_config: EndpointConfig | None = None,
    capture_dir: str | None = None,
    replay_dir: str | None = None,
    retries: int = 2,
    fail_open: bool = True,
) -> Advisor:
    if mode == "identity":
        return IdentityAdvisor()
    if mode == "heuristic":
        return HeuristicAdvisor()
    if mode == "remote":
        endpoint = ChatEndpoint(
            endpoint_config or EndpointConfig(),
            capture_dir=capture_dir,
            replay_dir=replay_dir,
        )
        return RemoteAdvisor(endpoint, retries=retries, fail_open=fail_open)
    raise ValueError(f"unknown advisor mode {mode!r}")
