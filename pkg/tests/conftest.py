import numpy as np
import pytest

from rulemine.dataset import (
    Feature,
    FeatureSchema,
    PredicateSpaceBuilder,
    Sample,
    SequenceDataset,
    SequenceSample,
    TabularDataset,
    build_matrix,
    sequence_predicates,
)


def boolean_dataset(columns: np.ndarray, labels: np.ndarray) -> TabularDataset:
    """All-boolean tabular dataset named f0..f{p-1}."""
    n, p = columns.shape
    feats = tuple(Feature(f"f{i}", "boolean", (False, True)) for i in range(p))
    samples = tuple(
        Sample({f"f{i}": bool(columns[r, i]) for i in range(p)}, bool(labels[r]))
        for r in range(n)
    )
    return TabularDataset(FeatureSchema(feats), samples)


def boolean_matrix(columns: np.ndarray, labels: np.ndarray):
    ds = boolean_dataset(columns, labels)
    return build_matrix(ds, PredicateSpaceBuilder(ds).build())


def planted_matrix(seed: int, n: int = 400, p: int = 6, noise: float = 0.02):
    """Labels are a noisy OR of f0&f1 and f3&f4&f5."""
    rng = np.random.default_rng(seed)
    cols = rng.random((n, p)) < 0.5
    y = (cols[:, 0] & cols[:, 1]) | (cols[:, 3] & cols[:, 4] & cols[:, 5])
    y = y ^ (rng.random(n) < noise)
    return boolean_matrix(cols, y)


def sequence_corpus(seed: int, n: int = 100):
    """Sequences over a small vocabulary where E11 before E28 flags abnormal."""
    rng = np.random.default_rng(seed)
    vocab = ["E3", "E5", "E9", "E11", "E20", "E26", "E28"]
    samples = []
    for _ in range(n):
        length = int(rng.integers(3, 9))
        events = [vocab[int(rng.integers(len(vocab)))] for _ in range(length)]
        it = iter(events)
        label = "E11" in it and "E28" in it  # ordered containment
        samples.append(SequenceSample(tuple(events), bool(label)))
    ds = SequenceDataset(tuple(sorted(vocab)), tuple(samples))
    matrix = build_matrix(ds, sequence_predicates(ds))
    return ds, matrix


@pytest.fixture
def tiny_matrix():
    cols = np.array(
        [
            [1, 1, 0],
            [1, 0, 1],
            [0, 1, 1],
            [1, 1, 1],
        ],
        dtype=bool,
    )
    y = np.array([1, 0, 0, 1], dtype=bool)
    return boolean_matrix(cols, y)
