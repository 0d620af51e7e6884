"""Accuracy, balanced accuracy, ROC AUC and confusion matrices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def _pair(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise MetricError(f"predictions {pred.shape} and labels {true.shape} must be equal-length vectors")
    if pred.size == 0:
        raise MetricError("empty label vectors")
    return pred, true


def accuracy(pred, true) -> float:
    pred, true = _pair(pred, true)
    return float(np.mean(pred == true))


def confusion(pred, true, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    pred, true = _pair(pred, true)
    pred = pred.astype(np.int64)
    true = true.astype(np.int64)
    for name, v in (("pred", pred), ("true", true)):
        if v.min() < 0 or v.max() >= n_classes:
            raise MetricError(f"{name} labels must lie in 0..{n_classes - 1}")
    return np.bincount(true * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def balanced_accuracy(pred, true, n_classes: int) -> float:
    cm = confusion(pred, true, n_classes)
    support = cm.sum(axis=1)
    if np.any(support == 0):
        raise MetricError(f"recall undefined: classes {np.flatnonzero(support == 0).tolist()} absent from truth")
    return float(np.mean(np.diag(cm) / support))


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg), via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_macro_ovr(proba, labels, n_classes: int) -> float:
    """Unweighted mean over classes of the one-vs-rest AUC of that class's column."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels)
    if proba.ndim != 2 or proba.shape[1] != n_classes or proba.shape[0] != labels.size:
        raise MetricError(f"expected probabilities of shape ({labels.size}, {n_classes}), got {proba.shape}")
    if n_classes == 2:
        return auc_binary(proba[:, 1], (labels == 1).astype(int))
    return float(np.mean([auc_binary(proba[:, c], (labels == c).astype(int)) for c in range(n_classes)]))


@dataclass
class EvalReport:
    split: str
    accuracy: float
    balanced_accuracy: float
    auc: float
    confusion: np.ndarray = field(repr=False)
    model: str = ""

    def row(self) -> dict:
        return {
            "model": self.model,
            "split": self.split,
            "n": int(self.confusion.sum()),
            "accuracy": repr(float(self.accuracy)),
            "balanced_accuracy": repr(float(self.balanced_accuracy)),
            "auc": repr(float(self.auc)),
            "confusion": json.dumps(self.confusion.tolist(), separators=(",", ":")),
        }


REPORT_COLUMNS = ("model", "split", "n", "accuracy", "balanced_accuracy", "auc", "confusion")


def evaluate(proba, labels, n_classes: int, split: str = "", model: str = "") -> EvalReport:
    """Score a probability matrix.  Metrics that are undefined on this split
    (a class missing from the truth) are reported as NaN."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = proba.argmax(axis=1)
    try:
        bal = balanced_accuracy(pred, labels, n_classes)
    except MetricError:
        bal = float("nan")
    try:
        auc = auc_macro_ovr(proba, labels, n_classes)
    except MetricError:
        auc = float("nan")
    return EvalReport(split, accuracy(pred, labels), bal, auc, confusion(pred, labels, n_classes), model)


def write_reports(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> list[EvalReport]:
    with open(path, newline="") as fh:
        return [
            EvalReport(
                split=r["split"],
                accuracy=float(r["accuracy"]),
                balanced_accuracy=float(r["balanced_accuracy"]),
                auc=float(r["auc"]),
                confusion=np.array(json.loads(r["confusion"]), dtype=np.int64),
                model=r["model"],
            )
            for r in csv.DictReader(fh)
        ]


def summary_table(reports) -> dict:
    """Nested ``{model: {metric: {split: value}}}`` mapping, the layout of the result tables."""
    out: dict = {}
    for r in reports:
        m = out.setdefault(r.model, {"accuracy": {}, "balanced_accuracy": {}, "auc": {}})
        for metric in ("accuracy", "balanced_accuracy", "auc"):
            v = float(getattr(r, metric))
            m[metric][r.split] = None if np.isnan(v) else round(v, 6)
    return out
