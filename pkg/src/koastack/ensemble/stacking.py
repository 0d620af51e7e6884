"""Stacked generalization over base-learner class probabilities."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .. import persist
from ..metrics import evaluate
from .search import MetaLearnerSpec, stratified_kfold

logger = logging.getLogger(__name__)

IN_SAMPLE = "in_sample"
OUT_OF_FOLD = "out_of_fold"


class StackingError(ValueError):
    pass


def select_base_learners(test_accuracies: dict, threshold: float) -> list:
    """Ids whose test accuracy exceeds ``threshold``, best first."""
    if not test_accuracies:
        raise StackingError("no base learners to select from")
    chosen = [k for k, acc in test_accuracies.items() if acc > threshold]
    if not chosen:
        best = max(test_accuracies.values())
        raise StackingError(
            f"no base learner exceeds accuracy threshold {threshold} (best is {best:.3f}); lower the threshold"
        )
    return sorted(chosen, key=lambda k: -test_accuracies[k])


@dataclass(frozen=True, eq=False)
class StackedFeatures:
    matrix: np.ndarray
    base_order: tuple
    n_classes: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(self.base_order) * self.n_classes:
            raise StackingError(
                f"matrix of shape {m.shape} does not hold {len(self.base_order)} blocks of {self.n_classes}"
            )
        sums = m.reshape(m.shape[0], len(self.base_order), self.n_classes).sum(axis=2)
        if m.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            raise StackingError("every learner block must be a probability vector")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "base_order", tuple(self.base_order))

    def block(self, learner) -> np.ndarray:
        i = self.base_order.index(learner)
        return self.matrix[:, i * self.n_classes:(i + 1) * self.n_classes]


def stack_features(prob_matrices, base_order) -> StackedFeatures:
    """Concatenate per-learner probability matrices column-wise in ``base_order``.

    ``prob_matrices`` is either a list aligned with ``base_order`` or a
    mapping from learner id to matrix.
    """
    if isinstance(prob_matrices, dict):
        mats = [np.asarray(prob_matrices[b], dtype=np.float64) for b in base_order]
    else:
        mats = [np.asarray(p, dtype=np.float64) for p in prob_matrices]
    if not mats or len(mats) != len(base_order):
        raise StackingError("need one probability matrix per base learner")
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise StackingError(f"probability matrices disagree in shape: {sorted(shapes)}")
    return StackedFeatures(np.hstack(mats), tuple(base_order), mats[0].shape[1])


def full_proba(model, X, n_classes: int) -> np.ndarray:
    """``predict_proba`` widened to columns ``0..n_classes-1`` (missing classes get 0)."""
    p = model.predict_proba(X)
    classes = np.asarray(model.classes_, dtype=np.int64)
    if p.shape[1] == n_classes and np.array_equal(classes, np.arange(n_classes)):
        return p
    out = np.zeros((p.shape[0], n_classes))
    out[:, classes] = p
    return out


def out_of_fold_probabilities(template, X, y, n_classes: int, folds: int = 5, seed: int = 0,
                              fit_params=None) -> np.ndarray:
    """Probabilities for every row of ``X`` from a clone never trained on that row."""
    X = np.asarray(X)
    y = np.asarray(y)
    out = np.zeros((X.shape[0], n_classes))
    for tr, va in stratified_kfold(y, folds, seed):
        model = clone(template).fit(X[tr], y[tr], **(fit_params or {}))
        out[va] = full_proba(model, X[va], n_classes)
    return out


@dataclass
class StackResult:
    meta: object
    features: dict       # split -> StackedFeatures
    reports: list        # EvalReport per split
    mode: str


def run_stack(base_models: dict, splits: dict, meta_spec: MetaLearnerSpec, n_classes: int,
              mode: str = IN_SAMPLE, folds: int = 5, seed: int = 0, name: str = "") -> StackResult:
    """Train a meta-learner on base probabilities and report every split.

    ``base_models`` maps learner id to a fitted estimator; ``splits`` maps
    split name to ``(X, y)`` and must contain ``train`` and ``test``.
    In ``in_sample`` mode the meta-learner sees the base learners' predictions on
    the very rows they were trained on; ``out_of_fold`` mode refits clones per
    fold so training features are leakage-free.  Validation and test
    features always come from the fully trained base models.
    """
    if mode not in (IN_SAMPLE, OUT_OF_FOLD):
        raise StackingError(f"unknown stacking mode {mode!r}")
    if "train" not in splits or "test" not in splits:
        raise StackingError("splits must include 'train' and 'test'")
    if mode == OUT_OF_FOLD and folds < 2:
        raise StackingError("out_of_fold mode needs at least 2 folds")
    if mode == IN_SAMPLE:
        logger.warning("in_sample stacking mode: meta-learner trains on in-sample base probabilities")
    order = tuple(base_models)
    features = {}
    for split, (X, _) in splits.items():
        if split == "train" and mode == OUT_OF_FOLD:
            continue
        features[split] = stack_features([full_proba(base_models[b], X, n_classes) for b in order], order)
    if mode == OUT_OF_FOLD:
        X, y = splits["train"]
        features["train"] = stack_features(
            [out_of_fold_probabilities(base_models[b], X, y, n_classes, folds, seed) for b in order], order
        )
    y_train = np.asarray(splits["train"][1])
    meta = meta_spec.build(seed).fit(features["train"].matrix, y_train)
    reports = []
    for split in ("train", "val", "test"):
        if split not in splits or len(splits[split][1]) == 0:
            continue
        proba = full_proba(meta, features[split].matrix, n_classes)
        reports.append(evaluate(proba, splits[split][1], n_classes, split, name or meta_spec.kind))
    return StackResult(meta, features, reports, mode)


@persist.register
class StackingClassifier(ClassifierMixin, BaseEstimator):
    """Base estimators plus a meta-learner over their concatenated probabilities.

    ``estimators`` is a list of ``(name, estimator)`` pairs; with
    ``prefit=True`` they are used as already trained.
    """

    def __init__(self, estimators=(), meta_learner=None, n_classes=5, mode=IN_SAMPLE, folds=5,
                 prefit=False, random_state=0):
        self.estimators = estimators
        self.meta_learner = meta_learner
        self.n_classes = n_classes
        self.mode = mode
        self.folds = folds
        self.prefit = prefit
        self.random_state = random_state

    @classmethod
    def from_fitted(cls, estimators, meta, n_classes: int, mode: str = IN_SAMPLE) -> "StackingClassifier":
        """Assemble from already trained base learners and meta-learner."""
        est = cls(list(estimators), meta, n_classes=n_classes, mode=mode, prefit=True)
        est.names_ = tuple(n for n, _ in estimators)
        est.estimators_ = [e for _, e in estimators]
        est.meta_ = meta
        est.classes_ = np.arange(n_classes)
        return est

    def _features(self, X):
        mats = [full_proba(m, X, self.n_classes) for m in self.estimators_]
        return stack_features(mats, self.names_).matrix

    def fit(self, X, y):
        if not self.estimators:
            raise StackingError("no base estimators")
        if self.mode not in (IN_SAMPLE, OUT_OF_FOLD):
            raise StackingError(f"unknown stacking mode {self.mode!r}")
        y = np.asarray(y)
        self.names_ = tuple(n for n, _ in self.estimators)
        self.estimators_ = [e if self.prefit else clone(e).fit(X, y) for _, e in self.estimators]
        if self.mode == OUT_OF_FOLD:
            mats = [out_of_fold_probabilities(e, X, y, self.n_classes, self.folds, self.random_state)
                    for _, e in self.estimators]
            Z = stack_features(mats, self.names_).matrix
        else:
            Z = self._features(X)
        meta = self.meta_learner if self.meta_learner is not None else MetaLearnerSpec("knn", {"k": 6}).build()
        self.meta_ = clone(meta).fit(Z, y)
        self.classes_ = np.arange(self.n_classes)
        return self

    def transform(self, X):
        check_is_fitted(self, "meta_")
        return self._features(X)

    def predict_proba(self, X):
        return full_proba(self.meta_, self.transform(X), self.n_classes)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def _persisted_params(self):
        # nested estimators are stored as fitted state, not constructor params
        params = self.get_params(deep=False)
        params["estimators"] = ()
        params["meta_learner"] = None
        return params

    def _get_state(self):
        return {
            "names": list(self.names_),
            "estimators": [persist.to_doc(e) for e in self.estimators_],
            "meta": persist.to_doc(self.meta_),
        }

    def _set_state(self, s):
        self.names_ = tuple(s["names"])
        self.estimators_ = [persist.from_doc(d) for d in s["estimators"]]
        self.meta_ = persist.from_doc(s["meta"])
        self.classes_ = np.arange(self.n_classes)


def write_proba_csv(ids, proba, path) -> None:
    """Header ``id,class_0..class_{C-1}``; values in round-tripping repr."""
    proba = np.asarray(proba, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *[f"class_{c}" for c in range(proba.shape[1])]])
        for i, row in zip(ids, proba):
            w.writerow([i, *[repr(float(v)) for v in row]])


def read_proba_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "id" or any(h != f"class_{c}" for c, h in enumerate(header[1:])):
        raise StackingError(f"{path}: unexpected probability CSV header {header}")
    ids = [r[0] for r in body]
    proba = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(header) - 1)
    return ids, proba
