"""Stratified k-fold cross-validated hyperparameter search for meta-learners."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..metrics import accuracy, balanced_accuracy
from .learners import GBDTClassifier, KNNClassifier, PassThroughClassifier, RandomForestClassifier

KINDS = {
    "knn": KNNClassifier,
    "random_forest": RandomForestClassifier,
    "gbdt": GBDTClassifier,
    "passthrough": PassThroughClassifier,
}


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class MetaLearnerSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SearchError(f"unknown meta-learner kind {self.kind!r}; choose from {sorted(KINDS)}")
        hp = self.hyperparameters
        if self.kind == "knn" and hp.get("k", 1) < 1:
            raise SearchError("knn needs k >= 1")
        if self.kind == "gbdt":
            if hp.get("depth", 0) < 0 or hp.get("iterations", 0) < 0 or hp.get("learning_rate", 0.1) <= 0:
                raise SearchError("gbdt needs depth >= 0, iterations >= 0, learning_rate > 0")

    def build(self, seed: int = 0):
        cls = KINDS[self.kind]
        params = dict(self.hyperparameters)
        if "random_state" in cls().get_params():
            params.setdefault("random_state", seed)
        return cls(**params)


@dataclass
class SearchGrid:
    params: dict
    folds: int = 5
    mode: str = "exhaustive"      # or "random"
    n_draws: int = 10
    seed: int = 0
    metric: str = "balanced_accuracy"

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise SearchError("every hyperparameter needs at least one candidate")
        if self.folds < 2:
            raise SearchError("need at least 2 folds")
        if self.mode not in ("exhaustive", "random"):
            raise SearchError(f"unknown search mode {self.mode!r}")
        if self.metric not in ("accuracy", "balanced_accuracy"):
            raise SearchError(f"unknown selection metric {self.metric!r}")

    def cells(self) -> list[dict]:
        keys = list(self.params)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.params[k] for k in keys))]


@dataclass
class CellResult:
    index: int
    hyperparameters: dict
    fold_scores: list
    mean: float


@dataclass
class SearchResult:
    best: MetaLearnerSpec
    best_score: float
    best_index: int
    cells: list


def stratified_kfold(y, folds: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train_idx, val_idx) pairs; each class is shuffled then dealt round-robin."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < folds:
        raise SearchError(
            f"{folds} folds infeasible: class {classes[counts.argmin()]} has only {counts.min()} samples"
        )
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    offset = 0
    for c in classes:
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    all_idx = np.arange(y.size)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(folds)]


def _score(metric, pred, true, n_classes):
    if metric == "accuracy":
        return accuracy(pred, true)
    return balanced_accuracy(pred, true, n_classes)


def cross_val_search(kind: str, grid: SearchGrid, X, y, seed: int = 0) -> SearchResult:
    """Score every visited cell by mean validation metric over stratified folds.

    The best cell has the highest mean; ties go to the earlier grid cell.
    Random mode visits ``n_draws`` distinct cells drawn uniformly under
    ``grid.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    splits = stratified_kfold(y, grid.folds, grid.seed)
    classes = np.unique(y)
    y_enc = np.searchsorted(classes, y)
    all_cells = grid.cells()
    if grid.mode == "random":
        rng = np.random.default_rng(grid.seed)
        visit = rng.choice(len(all_cells), size=min(grid.n_draws, len(all_cells)), replace=False)
    else:
        visit = np.arange(len(all_cells))

    results = []
    for ci in visit:
        hp = all_cells[ci]
        spec = MetaLearnerSpec(kind, hp)
        scores = []
        for tr, va in splits:
            model = spec.build(seed).fit(X[tr], y_enc[tr])
            scores.append(_score(grid.metric, model.predict(X[va]), y_enc[va], classes.size))
        results.append(CellResult(int(ci), hp, scores, float(np.mean(scores))))

    best = min(results, key=lambda r: (-r.mean, r.index))
    return SearchResult(MetaLearnerSpec(kind, best.hyperparameters), best.mean, best.index, results)


def write_search_csv(result: SearchResult, path) -> None:
    """One row per visited cell: hyperparameters, fold scores, mean."""
    keys = sorted({k for c in result.cells for k in c.hyperparameters})
    n_folds = max(len(c.fold_scores) for c in result.cells)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", *keys, *[f"fold_{i}" for i in range(n_folds)], "mean", "best"])
        for c in sorted(result.cells, key=lambda c: c.index):
            w.writerow([
                c.index,
                *[json.dumps(c.hyperparameters.get(k)) for k in keys],
                *[repr(float(s)) for s in c.fold_scores],
                repr(c.mean),
                int(c.index == result.best_index),
            ])
