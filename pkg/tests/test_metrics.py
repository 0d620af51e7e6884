import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from koastack.metrics import (
    MetricError, accuracy, auc_binary, auc_macro_ovr, balanced_accuracy, confusion, evaluate,
    read_reports, summary_table, write_reports,
)


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
    assert accuracy([1, 0], [0, 1]) == 0.0


def test_accuracy_empty():
    with pytest.raises(MetricError):
        accuracy([], [])


def test_confusion_examples():
    np.testing.assert_array_equal(confusion([1, 1], [0, 1], 2), [[0, 1], [0, 1]])
    y = [0, 0, 1, 2, 2, 2]
    np.testing.assert_array_equal(confusion(y, y, 3), np.diag([2, 1, 3]))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_confusion_sums_to_n(pairs):
    pred, true = zip(*pairs)
    assert confusion(pred, true, 4).sum() == len(pairs)


def test_balanced_accuracy_examples():
    assert balanced_accuracy([0, 1, 2], [0, 1, 2], 3) == 1.0
    true = [0] * 10 + [1] * 10
    pred = [0] * 8 + [1] * 2 + [0] * 4 + [1] * 6
    assert balanced_accuracy(pred, true, 2) == pytest.approx(0.7, abs=1e-15)
    assert balanced_accuracy([0] * 6, [0, 0, 0, 1, 1, 1], 2) == 0.5


def test_balanced_accuracy_missing_class():
    with pytest.raises(MetricError):
        balanced_accuracy([0, 1], [0, 0], 2)


def test_auc_binary_examples():
    assert auc_binary([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_binary([0.4] * 4, [1, 0, 1, 0]) == 0.5
    assert auc_binary([0.8, 0.3, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_auc_needs_both_classes():
    with pytest.raises(MetricError):
        auc_binary([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=100))
def test_auc_binary_matches_pairwise(rows):
    scores, labels = zip(*rows)
    if len(set(labels)) < 2:
        return
    assert auc_binary(np.array(scores) / 6.0, labels) == pairwise_auc(np.array(scores) / 6.0, labels)


def test_auc_macro_examples():
    y = np.array([0, 1, 2, 0, 1, 2])
    assert auc_macro_ovr(np.eye(3)[y], y, 3) == 1.0
    assert auc_macro_ovr(np.full((6, 3), 1 / 3), y, 3) == 0.5


def test_auc_macro_three_class_toy():
    proba = np.array([
        [0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7],
        [0.3, 0.4, 0.3], [0.5, 0.3, 0.2], [0.2, 0.3, 0.5],
    ])
    y = np.array([0, 1, 2, 1, 0, 2])
    expected = np.mean([pairwise_auc(proba[:, c], (y == c).astype(int)) for c in range(3)])
    assert auc_macro_ovr(proba, y, 3) == expected


def test_evaluate_nan_when_class_missing():
    r = evaluate(np.eye(3)[[0, 1, 1]], [0, 1, 1], 3)
    assert r.accuracy == 1.0 and math.isnan(r.balanced_accuracy) and math.isnan(r.auc)


def test_report_csv_round_trip(tmp_path, rng):
    y = rng.integers(0, 5, 40)
    p = rng.dirichlet(np.ones(5), 40)
    y[:5] = range(5)
    reports = [evaluate(p, y, 5, "test", "m1"), evaluate(p[::-1], y, 5, "val", "m2")]
    write_reports(reports, tmp_path / "r.csv")
    back = read_reports(tmp_path / "r.csv")
    for a, b in zip(reports, back):
        assert (a.model, a.split, a.accuracy, a.balanced_accuracy, a.auc) == \
               (b.model, b.split, b.accuracy, b.balanced_accuracy, b.auc)
        np.testing.assert_array_equal(a.confusion, b.confusion)


def test_summary_table_layout(rng):
    y = np.array([0, 1, 0, 1])
    r = evaluate(np.eye(2)[y], y, 2, "test", "m")
    assert summary_table([r]) == {"m": {"accuracy": {"test": 1.0}, "balanced_accuracy": {"test": 1.0},
                                        "auc": {"test": 1.0}}}
