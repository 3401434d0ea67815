"""Dataset ingestion and construction of the boolean predicate space.

Tabular, relation-pair and event-sequence data are normalised into a
:class:`PredicateMatrix`: one boolean column per predicate plus a boolean
target column. Continuous features are discretised with supervised
Gini-index splitting, categorical features are one-hot expanded, boolean
features become single flag predicates, and sequence data turns into
ordered-pattern predicates (one per vocabulary event) whose conjunctions
are read as ordered, non-contiguous subsequence patterns.

All types are immutable after construction and safe to share read-only
across workers.
"""

from __future__ import annotations

import csv
import hashlib
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

FEATURE_KINDS = ("categorical", "continuous", "boolean", "event-vocabulary")
PREDICATE_KINDS = ("equals", "in_interval", "flag", "ordered_pattern")

#: Synthetic feature name shared by all ordered-pattern predicates.
EVENTS_FEATURE = "events"


class DatasetError(ValueError):
    """Raised for malformed datasets, schemas or predicate evaluations."""


# ---------------------------------------------------------------------------
# Schema and samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Feature:
    """One dataset attribute: a name, a kind and its observed domain."""

    name: str
    kind: str
    domain: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_KINDS:
            raise DatasetError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DatasetError("feature names must be unique")

    def __iter__(self):
        return iter(self.features)

    def by_name(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise DatasetError(f"unknown feature {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)


@dataclass(frozen=True)
class Sample:
    """One tabular observation: feature name -> value, plus its label."""

    values: Mapping[str, object]
    label: object


@dataclass(frozen=True)
class SequenceSample:
    """One ordered event sequence plus its boolean label."""

    events: tuple[str, ...]
    label: bool


@dataclass(frozen=True)
class TabularDataset:
    schema: FeatureSchema
    samples: tuple[Sample, ...]

    def column(self, name: str) -> list:
        self.schema.by_name(name)
        return [s.values[name] for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SequenceDataset:
    vocabulary: tuple[str, ...]
    samples: tuple[SequenceSample, ...]

    def __post_init__(self) -> None:
        vocab = set(self.vocabulary)
        for s in self.samples:
            unknown = set(s.events) - vocab
            if unknown:
                raise DatasetError(f"events outside vocabulary: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    """A boolean test over one sample.

    ``equals`` and ``flag`` compare a feature value, ``in_interval`` tests a
    half-open interval (closed on the right when ``hi_closed``), and
    ``ordered_pattern`` matches when its events occur in the sequence in the
    given relative order, not necessarily contiguously.
    """

    id: int
    kind: str
    feature: str
    display: str
    value: object = None
    lo: float | None = None
    hi: float | None = None
    hi_closed: bool = False
    events: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PREDICATE_KINDS:
            raise DatasetError(f"unknown predicate kind {self.kind!r}")
        if self.kind == "in_interval":
            if self.lo is None or self.hi is None:
                raise DatasetError("interval predicate needs lo and hi")
            if self.hi_closed:
                if not self.lo <= self.hi:
                    raise DatasetError("interval requires lo <= hi")
            elif not self.lo < self.hi:
                raise DatasetError("interval requires lo < hi")
        if self.kind == "ordered_pattern" and not self.events:
            raise DatasetError("ordered pattern must be non-empty")


def _fmt(x: float) -> str:
    return f"{x:g}"


def equals_predicate(pid: int, feature: str, value: object) -> Predicate:
    return Predicate(pid, "equals", feature, f"{feature}={value}", value=value)


def flag_predicate(pid: int, feature: str) -> Predicate:
    return Predicate(pid, "flag", feature, feature, value=True)


def interval_predicate(
    pid: int, feature: str, lo: float, hi: float, hi_closed: bool
) -> Predicate:
    close = "]" if hi_closed else ")"
    display = f"{feature} in [{_fmt(lo)}, {_fmt(hi)}{close}"
    return Predicate(pid, "in_interval", feature, display, lo=lo, hi=hi, hi_closed=hi_closed)


def pattern_predicate(pid: int, events: Sequence[str]) -> Predicate:
    events = tuple(events)
    return Predicate(
        pid, "ordered_pattern", EVENTS_FEATURE, ",".join(events), events=events
    )


def matches_in_order(pattern: Sequence[str], events: Sequence[str]) -> bool:
    """True iff ``pattern`` is a (non-contiguous) subsequence of ``events``."""
    it = iter(events)
    return all(p in it for p in pattern)


def evaluate_predicate(p: Predicate, s: Union[Sample, SequenceSample]) -> bool:
    """Evaluate one predicate on one sample; kind/sample mismatch is an error."""
    if p.kind == "ordered_pattern":
        if not isinstance(s, SequenceSample):
            raise DatasetError("ordered pattern predicate needs a sequence sample")
        return matches_in_order(p.events, s.events)
    if isinstance(s, SequenceSample):
        raise DatasetError(f"{p.kind} predicate cannot evaluate a sequence sample")
    if p.feature not in s.values:
        raise DatasetError(f"sample lacks feature {p.feature!r}")
    v = s.values[p.feature]
    if p.kind == "equals":
        return v == p.value
    if p.kind == "flag":
        return bool(v)
    if not isinstance(v, (int, float, np.integer, np.floating)) or isinstance(v, bool):
        raise DatasetError(f"interval predicate on non-numeric value {v!r}")
    if p.hi_closed:
        return p.lo <= v <= p.hi
    return p.lo <= v < p.hi


def predicate_def(p: Predicate) -> dict:
    """Self-contained serialisable definition (no id; ids are space-local)."""
    d: dict = {"kind": p.kind, "feature": p.feature, "display": p.display}
    if p.kind == "equals":
        d["value"] = p.value
    elif p.kind == "in_interval":
        d.update(lo=p.lo, hi=p.hi, hi_closed=p.hi_closed)
    elif p.kind == "ordered_pattern":
        d["events"] = list(p.events)
    return d


def predicate_from_def(d: Mapping, pid: int = 0) -> Predicate:
    kind = d["kind"]
    if kind == "equals":
        return Predicate(pid, kind, d["feature"], d["display"], value=d["value"])
    if kind == "flag":
        return Predicate(pid, kind, d["feature"], d["display"], value=True)
    if kind == "in_interval":
        return Predicate(
            pid, kind, d["feature"], d["display"],
            lo=d["lo"], hi=d["hi"], hi_closed=bool(d["hi_closed"]),
        )
    if kind == "ordered_pattern":
        return Predicate(
            pid, kind, EVENTS_FEATURE, d["display"], events=tuple(d["events"])
        )
    raise DatasetError(f"unknown predicate kind {kind!r}")


# ---------------------------------------------------------------------------
# Supervised Gini discretisation
# ---------------------------------------------------------------------------


def _gini(pos: int, total: int) -> float:
    if total == 0:
        return 0.0
    q = pos / total
    return 2.0 * q * (1.0 - q)


def gini_split_points(
    values: Sequence[float], labels: Sequence[bool], n_bins: int
) -> list[float]:
    """Choose up to ``n_bins - 1`` thresholds by greedy recursive binary splits.

    At each step the interval whose best binary split yields the largest
    weighted Gini impurity decrease is split; candidate thresholds are the
    midpoints between consecutive distinct sorted values. Splitting stops
    once ``n_bins`` intervals exist or no split strictly decreases impurity.
    Fewer distinct values than requested bins simply yield fewer thresholds.
    """
    if len(values) == 0:
        raise DatasetError("empty feature")
    if len(values) != len(labels):
        raise DatasetError("values and labels must have the same length")
    if n_bins < 2:
        raise DatasetError("n_bins must be >= 2")

    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    v = np.asarray(values, dtype=float)[order]
    y = np.asarray(labels, dtype=bool)[order]
    n = len(v)
    pos_prefix = np.concatenate([[0], np.cumsum(y)])  # positives in v[:i]

    def best_split(a: int, b: int) -> tuple[float, float] | None:
        # Best candidate inside v[a:b]; returns (impurity decrease, threshold).
        size = b - a
        if size < 2:
            return None
        pos = pos_prefix[b] - pos_prefix[a]
        parent = (size / n) * _gini(pos, size)
        best: tuple[float, float] | None = None
        for i in range(a + 1, b):
            if v[i] == v[i - 1]:
                continue
            left_n = i - a
            left_pos = pos_prefix[i] - pos_prefix[a]
            weighted = (left_n / n) * _gini(left_pos, left_n) + (
                (size - left_n) / n
            ) * _gini(pos - left_pos, size - left_n)
            gain = parent - weighted
            thr = float(v[i - 1] + v[i]) / 2.0
            if gain > 1e-12 and (
                best is None or gain > best[0] + 1e-12
                or (abs(gain - best[0]) <= 1e-12 and thr < best[1])
            ):
                best = (gain, thr)
        return best

    intervals: list[tuple[int, int]] = [(0, n)]
    thresholds: list[float] = []
    while len(intervals) < n_bins:
        candidates = [(best_split(a, b), idx) for idx, (a, b) in enumerate(intervals)]
        candidates = [(c, idx) for c, idx in candidates if c is not None]
        if not candidates:
            break
        (gain, thr), idx = max(
            candidates, key=lambda e: (e[0][0], -e[0][1])
        )
        a, b = intervals[idx]
        split_at = a + int(np.searchsorted(v[a:b], thr))
        intervals[idx: idx + 1] = [(a, split_at), (split_at, b)]
        thresholds.append(thr)
    return sorted(thresholds)


# ---------------------------------------------------------------------------
# Predicate space construction
# ---------------------------------------------------------------------------


class PredicateSpaceBuilder:
    """Builds the predicate registry for a dataset, one feature at a time.

    Ids are assigned densely in feature order, so identical inputs always
    produce identical registries.
    """

    def __init__(self, dataset: TabularDataset, n_bins: int = 10):
        self.dataset = dataset
        self.n_bins = n_bins
        self._predicates: list[Predicate] = []

    def _next_id(self) -> int:
        return len(self._predicates)

    def discretize_feature(self, feature: Feature, labels: Sequence[bool]) -> list[Predicate]:
        """Supervised interval predicates for one continuous feature.

        Bins partition the observed range; each bin is left-closed and
        right-open except the last, which is closed on both ends (ties at a
        threshold go right).
        """
        if feature.kind != "continuous":
            raise DatasetError(f"{feature.name!r} is not continuous")
        values = [float(x) for x in self.dataset.column(feature.name)]
        thresholds = gini_split_points(values, labels, self.n_bins)
        lo, hi = min(values), max(values)
        out: list[Predicate] = []
        if not thresholds:
            out.append(interval_predicate(self._next_id(), feature.name, lo, hi, True))
            self._predicates.extend(out)
            return out
        edges = [lo, *thresholds, hi]
        for i in range(len(edges) - 1):
            last = i == len(edges) - 2
            out.append(
                interval_predicate(
                    self._next_id() + i, feature.name, edges[i], edges[i + 1], last
                )
            )
        self._predicates.extend(out)
        return out

    def onehot_predicates(self, feature: Feature) -> list[Predicate]:
        """Equality predicates, one per observed category.

        Boolean features get a single true-case flag; the false case is
        representable by absence.
        """
        if feature.kind == "boolean":
            p = flag_predicate(self._next_id(), feature.name)
            self._predicates.append(p)
            return [p]
        if feature.kind != "categorical":
            raise DatasetError(f"{feature.name!r} is not categorical or boolean")
        seen = sorted(set(self.dataset.column(feature.name)), key=lambda v: (str(type(v)), v))
        out = [
            equals_predicate(self._next_id() + i, feature.name, val)
            for i, val in enumerate(seen)
        ]
        self._predicates.extend(out)
        return out

    def build(self, labels: Sequence[bool] | None = None) -> list[Predicate]:
        """Predicates for every feature; ``labels`` drive Gini binning."""
        if labels is None:
            labels = [bool(s.label) for s in self.dataset.samples]
        for feature in self.dataset.schema:
            if feature.kind == "continuous":
                self.discretize_feature(feature, labels)
            else:
                self.onehot_predicates(feature)
        return list(self._predicates)


def sequence_predicates(dataset: SequenceDataset) -> list[Predicate]:
    """One single-event ordered-pattern predicate per vocabulary event."""
    return [pattern_predicate(i, [e]) for i, e in enumerate(sorted(dataset.vocabulary))]


# ---------------------------------------------------------------------------
# Predicate matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BodyState:
    """Evaluation state of a partial rule body on one matrix.

    ``column`` marks the samples the conjunction covers. For sequence
    matrices ``positions`` also records, per covered sample, the index just
    past the earliest match of the pattern built so far, enabling O(log n)
    extension by one more event.
    """

    ids: tuple[int, ...]
    column: np.ndarray
    coverage: int
    positions: np.ndarray | None = None


@dataclass(frozen=True)
class PredicateMatrix:
    """Boolean matrix (samples x predicates) plus the target column.

    Registry ids are dense ``0..P-1`` and equal their column index.
    Sequence corpora keep the raw event tuples so ordered patterns can be
    evaluated beyond the single-event columns.
    """

    columns: np.ndarray
    target: np.ndarray
    predicates: tuple[Predicate, ...]
    sequences: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.columns.ndim != 2 or self.columns.dtype != np.bool_:
            raise DatasetError("columns must be a 2-d boolean array")
        if len(self.target) != self.columns.shape[0]:
            raise DatasetError("target length must equal sample count")
        if self.columns.shape[1] != len(self.predicates):
            raise DatasetError("one column per predicate required")
        for i, p in enumerate(self.predicates):
            if p.id != i:
                raise DatasetError("registry ids must be dense 0..P-1")
        if self.sequences is not None and len(self.sequences) != self.n_samples:
            raise DatasetError("one sequence per sample required")

    @property
    def n_samples(self) -> int:
        return self.columns.shape[0]

    @property
    def n_predicates(self) -> int:
        return self.columns.shape[1]

    @property
    def is_sequence(self) -> bool:
        return self.sequences is not None

    @property
    def feature_of(self) -> tuple[str, ...]:
        return tuple(p.feature for p in self.predicates)

    @cached_property
    def _event_index(self) -> tuple[dict[str, np.ndarray], ...]:
        # Per sample: event -> sorted occurrence positions.
        assert self.sequences is not None
        out = []
        for seq in self.sequences:
            idx: dict[str, list[int]] = {}
            for i, e in enumerate(seq):
                idx.setdefault(e, []).append(i)
            out.append({e: np.asarray(v) for e, v in idx.items()})
        return tuple(out)

    def root_state(self) -> BodyState:
        col = np.ones(self.n_samples, dtype=bool)
        pos = np.zeros(self.n_samples, dtype=np.int64) if self.is_sequence else None
        return BodyState((), col, self.n_samples, pos)

    def extend(self, state: BodyState, pid: int) -> BodyState:
        """State after adding predicate ``pid`` to the body.

        Tabular: plain conjunction. Sequence: the predicate's events must
        occur, in order, after the part of the pattern already matched.
        """
        if not 0 <= pid < self.n_predicates:
            raise DatasetError(f"unknown predicate id {pid}")
        ids = state.ids + (pid,)
        if not self.is_sequence:
            col = state.column & self.columns[:, pid]
            return BodyState(ids, col, int(col.sum()))
        pred = self.predicates[pid]
        col = state.column.copy()
        pos = state.positions.copy()
        for i in np.flatnonzero(state.column):
            cursor = pos[i]
            ok = True
            for e in pred.events:
                occ = self._event_index[i].get(e)
                if occ is None:
                    ok = False
                    break
                j = bisect_right(occ, cursor - 1)
                if j >= len(occ):
                    ok = False
                    break
                cursor = occ[j] + 1
            if ok:
                pos[i] = cursor
            else:
                col[i] = False
                pos[i] = -1
        return BodyState(ids, col, int(col.sum()), pos)

    def body_column(self, ids: Sequence[int]) -> np.ndarray:
        """Truth column of a body; the vacuous conjunction covers everything.

        On sequence matrices the ids are read in order as one concatenated
        pattern; on tabular matrices order is irrelevant.
        """
        state = self.root_state()
        for pid in ids:
            state = self.extend(state, pid)
        return state.column

    def support_counts(self, state: BodyState, candidate_ids: Sequence[int]) -> np.ndarray:
        """Coverage of ``state`` extended by each candidate, vectorised where possible."""
        if not self.is_sequence:
            sub = self.columns[:, candidate_ids]
            return (state.column[:, None] & sub).sum(axis=0, dtype=np.int64)
        return np.asarray(
            [self.extend(state, pid).coverage for pid in candidate_ids], dtype=np.int64
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.predicates:
            h.update(repr(predicate_def(p)).encode())
        h.update(np.ascontiguousarray(self.columns).tobytes())
        h.update(np.ascontiguousarray(self.target).tobytes())
        if self.sequences is not None:
            for seq in self.sequences:
                h.update(" ".join(seq).encode())
                h.update(b"\n")
        return h.hexdigest()


def build_matrix(
    dataset: Union[TabularDataset, SequenceDataset],
    predicates: Sequence[Predicate],
    target: object = "label",
) -> PredicateMatrix:
    """Evaluate every predicate over the dataset into a PredicateMatrix.

    ``target`` is ``"label"`` (boolean labels), ``("class", value)`` for a
    one-vs-rest class column, or a :class:`Predicate` to evaluate.
    """
    if len(dataset.samples) == 0:
        raise DatasetError("empty dataset")
    if not predicates:
        raise DatasetError("predicates must be non-empty")
    preds = tuple(predicates)

    if isinstance(dataset, SequenceDataset):
        samples: Sequence = dataset.samples
        cols = np.zeros((len(samples), len(preds)), dtype=bool)
        for j, p in enumerate(preds):
            cols[:, j] = [evaluate_predicate(p, s) for s in samples]
        sequences = tuple(s.events for s in samples)
    else:
        samples = dataset.samples
        cols = np.zeros((len(samples), len(preds)), dtype=bool)
        by_feature: dict[str, list] = {}
        for j, p in enumerate(preds):
            if p.kind == "ordered_pattern":
                raise DatasetError("ordered pattern predicate on tabular data")
            if p.feature not in by_feature:
                by_feature[p.feature] = [s.values[p.feature] for s in samples]
            vals = by_feature[p.feature]
            if p.kind == "equals":
                cols[:, j] = [v == p.value for v in vals]
            elif p.kind == "flag":
                cols[:, j] = [bool(v) for v in vals]
            else:
                arr = np.asarray(vals, dtype=float)
                if p.hi_closed:
                    cols[:, j] = (arr >= p.lo) & (arr <= p.hi)
                else:
                    cols[:, j] = (arr >= p.lo) & (arr < p.hi)
        sequences = None

    if target == "label":
        tgt = np.asarray([bool(s.label) for s in samples], dtype=bool)
    elif isinstance(target, tuple) and len(target) == 2 and target[0] == "class":
        tgt = np.asarray([s.label == target[1] for s in samples], dtype=bool)
    elif isinstance(target, Predicate):
        tgt = np.asarray([evaluate_predicate(target, s) for s in samples], dtype=bool)
    else:
        raise DatasetError(f"unsupported target spec {target!r}")
    return PredicateMatrix(cols, tgt, preds, sequences)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _infer_kind(raw: list[str]) -> str:
    try:
        nums = [float(x) for x in raw]
    except ValueError:
        return "categorical"
    if set(nums) <= {0.0, 1.0}:
        return "boolean"
    return "continuous"


def _parse_value(raw: str, kind: str):
    if kind == "continuous":
        return float(raw)
    if kind == "boolean":
        return float(raw) == 1.0
    return raw


def load_tabular(
    path: Union[str, Path],
    delimiter: str = ",",
    label_column: str = "label",
    schema_overrides: Mapping[str, str] | None = None,
) -> TabularDataset:
    """Load a delimited-text table with a header row.

    Feature kinds come from ``schema_overrides`` where given, otherwise they
    are inferred: numeric parse -> continuous (exactly {0,1} -> boolean),
    else categorical. The label column parses as boolean when 0/1-valued and
    is kept as a class identifier string otherwise.
    """
    overrides = dict(schema_overrides or {})
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            rows = [row for row in reader if row]
    except OSError as exc:
        raise DatasetError(f"cannot read dataset: {exc}") from exc
    if len(rows) < 2:
        raise DatasetError(f"{path}: need a header row and at least one sample")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DatasetError(f"{path}: missing label column {label_column!r}")
    body = [[c.strip() for c in row] for row in rows[1:]]
    for row in body:
        if len(row) != len(header):
            raise DatasetError(f"{path}: ragged row with {len(row)} cells")

    label_idx = header.index(label_column)
    label_raw = [row[label_idx] for row in body]
    labels_boolean = set(label_raw) <= {"0", "1"}

    features: list[Feature] = []
    columns: dict[str, list] = {}
    for i, name in enumerate(header):
        if i == label_idx:
            continue
        raw = [row[i] for row in body]
        kind = overrides.get(name) or _infer_kind(raw)
        if kind not in ("categorical", "continuous", "boolean"):
            raise DatasetError(f"unsupported schema override {kind!r} for {name!r}")
        values = [_parse_value(x, kind) for x in raw]
        domain = tuple(sorted(set(values))) if kind != "continuous" else (
            min(values), max(values))
        features.append(Feature(name, kind, domain))
        columns[name] = values

    samples = []
    for r, row in enumerate(body):
        label = row[label_idx] == "1" if labels_boolean else row[label_idx]
        samples.append(
            Sample({f.name: columns[f.name][r] for f in features}, label)
        )
    return TabularDataset(FeatureSchema(tuple(features)), tuple(samples))


def load_sequences(path: Union[str, Path]) -> SequenceDataset:
    """Load one whitespace-separated event sequence per line, label last."""
    samples = []
    vocab: set[str] = set()
    try:
        fh = open(path)
    except OSError as exc:
        raise DatasetError(f"cannot read dataset: {exc}") from exc
    with fh:
        for ln, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[-1] not in ("0", "1"):
                raise DatasetError(f"{path}:{ln}: final token must be the 0/1 label")
            events = tuple(tokens[:-1])
            if not events:
                raise DatasetError(f"{path}:{ln}: empty sequence")
            vocab.update(events)
            samples.append(SequenceSample(events, tokens[-1] == "1"))
    if not samples:
        raise DatasetError(f"{path}: no sequences")
    return SequenceDataset(tuple(sorted(vocab)), tuple(samples))
