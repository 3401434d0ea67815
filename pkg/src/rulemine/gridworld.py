"""Two-agent cooperative gridworld for end-to-end rule mining evaluation.

Alice and Bob move simultaneously on a 13x9 grid to reach the treasure
within 50 steps. The map fixture wires a strict subgoal chain: the yellow
block is the key that opens door ``d`` guarding the purple block, purple is
the lever that removes the removable walls gating the skyblue block, and
skyblue is a pressure plate that holds door ``e`` to the treasure open only
while an agent stands on it. Walking into a wall costs -0.1 (general) or
-10 (removable); reaching the treasure pays +100 and wins.

Map legend: ``#`` wall, ``%`` removable wall, ``.`` floor, ``A``/``B``
agent starts, ``Y`` yellow, ``P`` purple, ``S`` skyblue, ``G`` treasure,
``d`` key door, ``e`` plate door.

Stepping is deterministic given state and joint action; an episode replays
bit-identically from (seed, config). One environment instance serves one
episode at a time; episodes across seeds are independent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .config import derive_seed
from .dataset import (
    DatasetError,
    Feature,
    FeatureSchema,
    Sample,
    TabularDataset,
    equals_predicate,
    predicate_def,
)
from .rules import Rule, RuleMetrics, Rulebook, RulebookEntry

ACTIONS = ("up", "down", "left", "right", "stand")
_DELTAS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0), "stand": (0, 0)}

#: Neighbor keys in observation order, with their (dx, dy) offsets.
NEIGHBOR_KEYS = (
    ("ul", (-1, -1)), ("uc", (0, -1)), ("ur", (1, -1)),
    ("cl", (-1, 0)), ("cr", (1, 0)),
    ("ll", (-1, 1)), ("lc", (0, 1)), ("lr", (1, 1)),
)

#: Moving action -> the neighbor key of the cell it enters.
ACTION_NEIGHBOR = {"up": "uc", "down": "lc", "left": "cl", "right": "cr"}

AGENTS = ("alice", "bob")
SPECIAL_COLORS = ("yellow", "purple", "skyblue")

GENERAL_WALL_PENALTY = -0.1
REMOVABLE_WALL_PENALTY = -10.0
TREASURE_REWARD = 100.0

MAP_VERSION = "alice_bob_map_v1"


class GridError(ValueError):
    """Raised for malformed maps or illegal environment usage."""


@dataclass(frozen=True)
class GridConfig:
    """Parsed map plus the episode step limit."""

    rows: tuple[str, ...]
    max_steps: int = 50

    def __post_init__(self) -> None:
        widths = {len(r) for r in self.rows}
        if len(widths) != 1:
            raise GridError("map rows must have equal width")
        for ch, what in (("A", "alice start"), ("B", "bob start"),
                         ("Y", "yellow"), ("P", "purple"), ("S", "skyblue"),
                         ("G", "treasure")):
            if sum(r.count(ch) for r in self.rows) != 1:
                raise GridError(f"map must contain exactly one {what} ({ch!r})")

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    def find(self, ch: str) -> tuple[int, int]:
        for y, row in enumerate(self.rows):
            x = row.find(ch)
            if x >= 0:
                return (x, y)
        raise GridError(f"map lacks {ch!r}")

    def cell(self, pos: tuple[int, int]) -> str:
        x, y = pos
        if not (0 <= x < self.width and 0 <= y < self.height):
            return "#"
        return self.rows[y][x]

    @property
    def treasure(self) -> tuple[int, int]:
        return self.find("G")

    @property
    def special_cells(self) -> dict[str, tuple[int, int]]:
        return {"yellow": self.find("Y"), "purple": self.find("P"),
                "skyblue": self.find("S")}

    @property
    def starts(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (self.find("A"), self.find("B"))

    @classmethod
    def from_text(cls, text: str, max_steps: int = 50) -> "GridConfig":
        rows = tuple(line for line in text.splitlines() if line)
        return cls(rows, max_steps)

    @classmethod
    def load(cls, path: Union[str, Path], max_steps: int = 50) -> "GridConfig":
        return cls.from_text(Path(path).read_text(), max_steps)


def default_map() -> GridConfig:
    text = (
        resources.files("rulemine.data").joinpath(f"{MAP_VERSION}.txt").read_text()
    )
    return GridConfig.from_text(text)


@dataclass(frozen=True)
class Observation:
    """One agent's view: 3x3 neighborhood colors, treasure offsets, flags.

    ``dx``/``dy`` are the agent's position minus the treasure's (positive dy
    means the agent is below the treasure).
    """

    neighbors: tuple[str, ...]
    dx: int
    dy: int
    mate_dx: int
    mate_dy: int
    visited: tuple[bool, bool, bool]
    mate_visited: tuple[bool, bool, bool]
    standing_on: str
    mate_standing_on: str

    def __post_init__(self) -> None:
        if len(self.neighbors) != 8:
            raise GridError("observation must carry exactly 8 neighbor colors")


@dataclass(frozen=True)
class Transition:
    observations: tuple[Observation, Observation]
    actions: tuple[str, str]
    reward: float
    done: bool


@dataclass(frozen=True)
class StepRecord:
    """Pre-step observations plus what the step did (for dataset building)."""

    pre_obs: tuple[Observation, Observation]
    actions: tuple[str, str]
    reward: float
    post_standing: tuple[str, str]
    won: bool


@dataclass(frozen=True)
class Episode:
    seed: int
    steps: tuple[StepRecord, ...]
    outcome: str  # win | timeout
    total_reward: float

    @property
    def length(self) -> int:
        return len(self.steps)


class GridWorld:
    """The environment. Mutable; one writer per instance."""

    def __init__(self, config: GridConfig | None = None):
        self.config = config or default_map()
        self.reset()

    def reset(self) -> tuple[Observation, Observation]:
        self.positions: list[tuple[int, int]] = list(self.config.starts)
        self.visited: list[set[str]] = [set(), set()]
        self.steps = 0
        self.done = False
        self.outcome = ""
        self.total_reward = 0.0
        self.lever_pulled = False
        self.key_found = False
        self._mark_visits()
        return self.observations()

    # -- state helpers ------------------------------------------------------

    def _mark_visits(self) -> None:
        specials = self.config.special_cells
        for i, pos in enumerate(self.positions):
            for color, cell in specials.items():
                if pos == cell:
                    self.visited[i].add(color)
        if any("yellow" in v for v in self.visited):
            self.key_found = True
        if any("purple" in v for v in self.visited):
            self.lever_pulled = True

    @property
    def plate_held(self) -> bool:
        plate = self.config.special_cells["skyblue"]
        return plate in self.positions

    def cell_color(self, pos: tuple[int, int]) -> str:
        ch = self.config.cell(pos)
        if ch == "#":
            return "black"
        if ch == "%":
            return "white" if self.lever_pulled else "removable"
        if ch == "d":
            return "white" if self.key_found else "door"
        if ch == "e":
            return "white" if self.plate_held else "door"
        return {"Y": "yellow", "P": "purple", "S": "skyblue", "G": "green"}.get(ch, "white")

    def passable(self, pos: tuple[int, int]) -> bool:
        return self.cell_color(pos) not in ("black", "removable", "door")

    def observe(self, agent: int) -> Observation:
        pos = self.positions[agent]
        mate = self.positions[1 - agent]
        tx, ty = self.config.treasure
        neighbors = tuple(
            self.cell_color((pos[0] + dx, pos[1] + dy)) for _, (dx, dy) in NEIGHBOR_KEYS
        )
        own_visits = tuple(c in self.visited[agent] for c in SPECIAL_COLORS)
        mate_visits = tuple(c in self.visited[1 - agent] for c in SPECIAL_COLORS)
        return Observation(
            neighbors=neighbors,
            dx=pos[0] - tx,
            dy=pos[1] - ty,
            mate_dx=mate[0] - tx,
            mate_dy=mate[1] - ty,
            visited=own_visits,
            mate_visited=mate_visits,
            standing_on=self.cell_color(pos),
            mate_standing_on=self.cell_color(mate),
        )

    def observations(self) -> tuple[Observation, Observation]:
        return (self.observe(0), self.observe(1))

    # -- dynamics ------------------------------------------------------------

    def step(self, actions: tuple[str, str]) -> Transition:
        """Simultaneous joint move.

        Blocked moves keep position and charge the wall penalty; agents
        aiming at one cell (or swapping cells) both bounce without penalty.
        Door and lever effects activate after the move resolves.
        """
        if self.done:
            raise GridError("episode is done; reset before stepping again")
        for a in actions:
            if a not in ACTIONS:
                raise GridError(f"unknown action {a!r}")

        reward = 0.0
        targets: list[tuple[int, int]] = []
        for i, action in enumerate(actions):
            dx, dy = _DELTAS[action]
            pos = self.positions[i]
            nxt = (pos[0] + dx, pos[1] + dy)
            if nxt == pos:
                targets.append(pos)
                continue
            color = self.cell_color(nxt)
            if color in ("black", "door"):
                reward += GENERAL_WALL_PENALTY
                targets.append(pos)
            elif color == "removable":
                reward += REMOVABLE_WALL_PENALTY
                targets.append(pos)
            else:
                targets.append(nxt)

        same_cell = targets[0] == targets[1]
        swapped = (
            targets[0] == self.positions[1]
            and targets[1] == self.positions[0]
            and targets[0] != targets[1]
        )
        if same_cell or swapped:
            targets = list(self.positions)

        self.positions = targets
        won = self.config.treasure in self.positions
        if won:
            reward += TREASURE_REWARD
        self._mark_visits()
        self.steps += 1
        if won:
            self.done = True
            self.outcome = "win"
        elif self.steps >= self.config.max_steps:
            self.done = True
            self.outcome = "timeout"
        self.total_reward += reward
        return Transition(self.observations(), tuple(actions), reward, self.done)


# ---------------------------------------------------------------------------
# Navigation and the handcrafted optimal policy
# ---------------------------------------------------------------------------


def _planning_passable(env: GridWorld, pos: tuple[int, int]) -> bool:
    # Doors are transient, so plans treat them as open; removable walls are
    # solid until the lever removes them.
    ch = env.config.cell(pos)
    if ch == "#":
        return False
    if ch == "%":
        return env.lever_pulled
    return True


def distance_field(env: GridWorld, goal: tuple[int, int]) -> dict[tuple[int, int], int]:
    """BFS distances to ``goal`` over the planning map."""
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        cur = queue.popleft()
        for action in ("up", "down", "left", "right"):
            dx, dy = _DELTAS[action]
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in dist or not _planning_passable(env, nxt):
                continue
            dist[nxt] = dist[cur] + 1
            queue.append(nxt)
    return dist


def nav_step(env: GridWorld, agent: int, goal: tuple[int, int]) -> str:
    """Shortest-path step toward ``goal``; waits at currently closed doors.

    Returns "stand" when already at the goal or when no plan exists.
    """
    pos = env.positions[agent]
    if pos == goal:
        return "stand"
    dist = distance_field(env, goal)
    if pos not in dist:
        return "stand"
    best_action = "stand"
    best = dist[pos]
    for action in ("up", "down", "left", "right"):
        dx, dy = _DELTAS[action]
        nxt = (pos[0] + dx, pos[1] + dy)
        if nxt in dist and dist[nxt] < best:
            best = dist[nxt]
            best_action = action
    if best_action == "stand":
        return "stand"
    dx, dy = _DELTAS[best_action]
    nxt = (pos[0] + dx, pos[1] + dy)
    if not env.passable(nxt):
        return "stand"  # wait for the door to open
    return best_action


def optimal_joint_policy(env: GridWorld) -> tuple[str, str]:
    """Handcrafted optimal play for the fixture map.

    Alice opens the chain (purple behind the key door, then holds the
    skyblue plate); Bob fetches the yellow key and then takes the treasure
    through the plate door. Each agent replans every step, so random
    deviations self-heal.
    """
    cells = env.config.special_cells
    alice_goal = cells["purple"] if not env.lever_pulled else cells["skyblue"]
    bob_goal = cells["yellow"] if not env.key_found else env.config.treasure
    return (nav_step(env, 0, alice_goal), nav_step(env, 1, bob_goal))


def collect_trajectories(
    config: GridConfig,
    p: float,
    n_episodes: int,
    seed: int,
    policy: Callable[[GridWorld], tuple[str, str]] | None = None,
) -> list[Episode]:
    """Roll out the p-mixture behaviour policy.

    At each step every agent independently follows the optimal policy with
    probability ``p`` and a uniformly random action otherwise. Episode
    randomness derives from (seed, episode index), so collections reproduce
    and episodes can run concurrently and merge in seed order.
    """
    if not 0.0 <= p <= 1.0:
        raise GridError("p must be in [0, 1]")
    policy = policy or optimal_joint_policy
    episodes: list[Episode] = []
    for ep in range(n_episodes):
        ep_seed = derive_seed(seed, "episode", ep)
        rng = np.random.default_rng(ep_seed)
        env = GridWorld(config)
        records: list[StepRecord] = []
        while not env.done:
            pre = env.observations()
            optimal = policy(env)
            actions = tuple(
                optimal[i] if rng.random() < p else ACTIONS[int(rng.integers(5))]
                for i in range(2)
            )
            t = env.step(actions)
            records.append(
                StepRecord(
                    pre_obs=pre,
                    actions=actions,
                    reward=t.reward,
                    post_standing=(env.cell_color(env.positions[0]),
                                   env.cell_color(env.positions[1])),
                    won=env.outcome == "win" and env.done,
                )
            )
        episodes.append(Episode(ep_seed, tuple(records), env.outcome, env.total_reward))
    return episodes


# ---------------------------------------------------------------------------
# Episodes -> predicate datasets
# ---------------------------------------------------------------------------

GRIDWORLD_TARGETS = (
    "penalty",
    "stands_on:yellow:alice",
    "stands_on:yellow:bob",
    "stands_on:purple:alice",
    "stands_on:purple:bob",
    "stands_on:skyblue:alice",
    "stands_on:skyblue:bob",
    "win",
)


def observation_features(
    obs: Observation, mate_obs: Observation, own_action: str, mate_action: str
) -> dict[str, object]:
    """Feature dict for one agent's step, all categoricals stringified.

    String values survive the delimited-text round trip unchanged, so rules
    mined from written datasets still match live observations.
    """
    values: dict[str, object] = {
        "own_action": own_action,
        "mate_action": mate_action,
        "own_dx": str(obs.dx),
        "own_dy": str(obs.dy),
        "mate_dx": str(obs.mate_dx),
        "mate_dy": str(obs.mate_dy),
        "own_standing_on": obs.standing_on,
        "mate_standing_on": obs.mate_standing_on,
    }
    for (key, _), color in zip(NEIGHBOR_KEYS, obs.neighbors):
        values[f"own_nb_{key}"] = color
    for color, flag in zip(SPECIAL_COLORS, obs.visited):
        values[f"own_visited_{color}"] = bool(flag)
    for color, flag in zip(SPECIAL_COLORS, obs.mate_visited):
        values[f"mate_visited_{color}"] = bool(flag)
    return values


def _parse_target(target_kind: str) -> tuple[str, str | None, str | None]:
    if target_kind in ("win", "penalty"):
        return target_kind, None, None
    parts = target_kind.split(":")
    if len(parts) == 3 and parts[0] == "stands_on":
        _, color, agent = parts
        if color in SPECIAL_COLORS and agent in AGENTS:
            return "stands_on", color, agent
    raise GridError(f"unknown target kind {target_kind!r}")


def episodes_to_dataset(episodes: Sequence[Episode], target_kind: str) -> TabularDataset:
    """One sample per step per relevant agent, labelled by the target event.

    ``stands_on:<color>:<agent>`` labels that agent's next standing color;
    ``win`` labels the step that reaches the treasure of a winning episode
    (samples from both agents); ``penalty`` labels steps whose team reward
    is exactly -10.
    """
    if not episodes:
        raise DatasetError("empty episodes")
    kind, color, agent = _parse_target(target_kind)
    relevant = [AGENTS.index(agent)] if agent is not None else [0, 1]

    rows: list[Sample] = []
    for ep in episodes:
        for rec in ep.steps:
            for i in relevant:
                values = observation_features(
                    rec.pre_obs[i], rec.pre_obs[1 - i], rec.actions[i], rec.actions[1 - i]
                )
                if kind == "stands_on":
                    label = rec.post_standing[i] == color
                elif kind == "win":
                    label = rec.won
                else:
                    label = rec.reward == REMOVABLE_WALL_PENALTY
                rows.append(Sample(values, label))

    names = list(rows[0].values)
    features = []
    for name in names:
        if name.startswith(("own_visited", "mate_visited")):
            features.append(Feature(name, "boolean", (False, True)))
        else:
            domain = tuple(sorted({str(s.values[name]) for s in rows}))
            features.append(Feature(name, "categorical", domain))
    return TabularDataset(FeatureSchema(tuple(features)), tuple(rows))


# ---------------------------------------------------------------------------
# Handcrafted rulebook and the scripted rule-following agent
# ---------------------------------------------------------------------------

_PERFECT = RuleMetrics(
    coverage_count=1, positive_count=1, precision=1.0, recall=1.0, f1=1.0,
    coverage_fraction=1.0,
)


def handcrafted_rulebook() -> Rulebook:
    """Grounded knowledge for the fixture map, written as ordinary rules.

    For every special block and agent: stepping onto an adjacent block of
    that color lands on it, and standing still on it stays on it; stepping
    onto an adjacent green block wins. Metrics are nominal (provenance
    handcrafted): there is no dataset to score them on.
    """
    entries: list[RulebookEntry] = []
    next_id = 0

    def add(target: str, defs: list[dict], text: str) -> None:
        nonlocal next_id
        ids = tuple(range(next_id, next_id + len(defs)))
        next_id += len(defs)
        rule = Rule(ids, target, provenance="handcrafted")
        entries.append(
            RulebookEntry(
                rule=rule,
                metrics=_PERFECT,
                reward=1.0,
                translation=text,
                key=f"{target}|{','.join(map(str, ids))}",
                body_names=tuple(d["display"] for d in defs),
                body_defs=tuple(defs),
            )
        )

    def eq(feature: str, value: str) -> dict:
        return predicate_def(equals_predicate(0, feature, value))

    for agent in AGENTS:
        for color in SPECIAL_COLORS:
            target = f"stands_on:{color}:{agent}"
            for action, nb in ACTION_NEIGHBOR.items():
                add(
                    target,
                    [eq(f"own_nb_{nb}", color), eq("own_action", action)],
                    f"If {agent}'s {nb} block is {color} and {agent} moves "
                    f"{action}, then {agent} will stand on the {color} block.",
                )
            add(
                target,
                [eq("own_standing_on", color), eq("own_action", "stand")],
                f"If {agent} keeps standing on the {color} block, then "
                f"{agent} will stand on the {color} block.",
            )
        for action, nb in ACTION_NEIGHBOR.items():
            add(
                "win",
                [eq(f"own_nb_{nb}", "green"), eq("own_action", action)],
                f"If {agent}'s {nb} block is green and {agent} moves "
                f"{action}, then the team wins the treasure.",
            )
    return Rulebook(tuple(entries), {"map": MAP_VERSION, "provenance": "handcrafted"})


def _entry_matches(entry: RulebookEntry, values: dict[str, object]) -> bool:
    for d in entry.body_defs:
        v = values.get(d["feature"])
        if d["kind"] == "equals":
            if v != d["value"]:
                return False
        elif d["kind"] == "flag":
            if not bool(v):
                return False
        else:
            return False
    return True


class RulePolicy:
    """Scripted consumer of a rulebook.

    The rulebook decides which subgoals exist: a color subgoal is active
    only when some rule targets standing on it, so an empty book degrades to
    chasing the treasure directly (which the map forbids). At each step the
    agent takes the action whose matched rules promise its current subgoal
    in the fixed order yellow -> purple -> skyblue hold -> win, falling back
    to a shortest-path step toward the subgoal cell. Actions matching a
    penalty rule are vetoed.
    """

    def __init__(self, book: Rulebook, config: GridConfig | None = None):
        self.book = book
        self.config = config or default_map()
        targets = {e.rule.target for e in book.entries}
        self.active = {
            color: any(t.startswith(f"stands_on:{color}:") for t in targets)
            for color in SPECIAL_COLORS
        }
        self.penalty_entries = [e for e in book.entries if e.rule.target == "penalty"]
        self.prev_actions: tuple[str, str] = ("stand", "stand")

    def reset(self) -> None:
        self.prev_actions = ("stand", "stand")

    # -- subgoal machinery --------------------------------------------------

    def _needed(self, env: GridWorld) -> list[str]:
        needed = []
        if self.active["yellow"] and not env.key_found:
            needed.append("yellow")
        if self.active["purple"] and not env.lever_pulled:
            needed.append("purple")
        if self.active["skyblue"] and not env.plate_held:
            needed.append("skyblue")
        needed.append("win")
        return needed

    def _goal_cell(self, env: GridWorld, subgoal: str) -> tuple[int, int]:
        if subgoal == "win":
            return env.config.treasure
        return env.config.special_cells[subgoal]

    def _assignments(self, env: GridWorld) -> tuple[str, str]:
        needed = self._needed(env)
        current = needed[0]
        dist = distance_field(env, self._goal_cell(env, current))
        d = [dist.get(env.positions[i], 10**6) for i in range(2)]
        pursuer = 0 if d[0] <= d[1] else 1
        # The staging agent takes the first later subgoal it can already
        # path to (the skyblue area stays sealed until the lever is pulled).
        other = 1 - pursuer
        other_goal = "win"
        for g in needed[1:]:
            reach = distance_field(env, self._goal_cell(env, g))
            if env.positions[other] in reach:
                other_goal = g
                break
        out = ["", ""]
        out[pursuer] = current
        out[other] = other_goal
        return tuple(out)

    def _matched_reward(self, entries: list[RulebookEntry], values: dict) -> float | None:
        best = None
        for e in entries:
            if _entry_matches(e, values):
                if best is None or e.reward > best:
                    best = e.reward
        return best

    def _agent_action(self, env: GridWorld, agent: int, subgoal: str) -> str:
        name = AGENTS[agent]
        on_plate = env.positions[agent] == env.config.special_cells["skyblue"]
        if (
            on_plate
            and self.active["skyblue"]
            and env.key_found
            and env.lever_pulled
        ):
            return "stand"  # hold the plate for the teammate

        if subgoal == "win":
            wanted = "win"
        else:
            wanted = f"stands_on:{subgoal}:{name}"
        promising = [e for e in self.book.entries if e.rule.target == wanted]

        obs = env.observe(agent)
        mate_obs = env.observe(1 - agent)
        mate_prev = self.prev_actions[1 - agent]
        best_action = None
        best_reward = -1.0
        for action in ACTIONS:
            values = observation_features(obs, mate_obs, action, mate_prev)
            if self.penalty_entries and self._matched_reward(self.penalty_entries, values) is not None:
                continue
            matched = self._matched_reward(promising, values)
            if matched is not None and matched > best_reward:
                best_reward = matched
                best_action = action
        if best_action is not None and best_action != "stand":
            return best_action
        return nav_step(env, agent, self._goal_cell(env, subgoal))

    def __call__(self, env: GridWorld) -> tuple[str, str]:
        assignment = self._assignments(env)
        actions = tuple(
            self._agent_action(env, i, assignment[i]) for i in range(2)
        )
        self.prev_actions = actions
        return actions


def scripted_rule_agent(book: Rulebook, config: GridConfig | None = None) -> RulePolicy:
    return RulePolicy(book, config)


@dataclass(frozen=True)
class GridEvalRow:
    episode: int
    seed: int
    length: int
    reward: float
    outcome: str


@dataclass(frozen=True)
class GridEvalResult:
    """Mean accumulated reward, mean episode length and win rate."""

    ar: float
    al: float
    wr: float
    rows: tuple[GridEvalRow, ...]


def evaluate_policy(
    policy: Callable[[GridWorld], tuple[str, str]],
    config: GridConfig,
    n_episodes: int,
    seed: int,
    noise: float = 0.05,
) -> GridEvalResult:
    """Evaluate a joint policy over seeded episodes.

    ``noise`` replaces each agent's action with a uniformly random one at
    that rate, so deterministic policies still see varied conditions across
    seeds and must re-plan.
    """
    rows: list[GridEvalRow] = []
    for ep in range(n_episodes):
        ep_seed = derive_seed(seed, "eval-episode", ep)
        rng = np.random.default_rng(ep_seed)
        env = GridWorld(config)
        if hasattr(policy, "reset"):
            policy.reset()
        while not env.done:
            actions = policy(env)
            actions = tuple(
                ACTIONS[int(rng.integers(5))] if rng.random() < noise else a
                for a in actions
            )
            env.step(actions)
        rows.append(GridEvalRow(ep, ep_seed, env.steps, env.total_reward, env.outcome))
    n = len(rows)
    return GridEvalResult(
        ar=sum(r.reward for r in rows) / n,
        al=sum(r.length for r in rows) / n,
        wr=sum(1 for r in rows if r.outcome == "win") / n,
        rows=tuple(rows),
    )


# ---------------------------------------------------------------------------
# Episode logs (structured text, replayable)
# ---------------------------------------------------------------------------


def dump_episodes(episodes: Sequence[Episode]) -> str:
    lines = ["episode-log-format: 1", f"map: {MAP_VERSION}"]
    for ep in episodes:
        lines.append(f"[episode seed={ep.seed} outcome={ep.outcome} reward={ep.total_reward!r}]")
        for rec in ep.steps:
            lines.append(f"{rec.actions[0]} {rec.actions[1]} {rec.reward!r}")
    return "\n".join(lines) + "\n"


def replay_episode(config: GridConfig, actions: Sequence[tuple[str, str]]) -> GridWorld:
    """Re-apply a recorded action sequence; stepping is deterministic."""
    env = GridWorld(config)
    for joint in actions:
        env.step(joint)
    return env


def load_episode_actions(text: str) -> list[list[tuple[str, str]]]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("episode-log-format:"):
        raise GridError("not an episode log")
    out: list[list[tuple[str, str]]] = []
    for line in lines[1:]:
        if line.startswith("[episode"):
            out.append([])
        elif line.startswith("map:") or not line.strip():
            continue
        else:
            a, b, _ = line.split()
            out[-1].append((a, b))
    return out
