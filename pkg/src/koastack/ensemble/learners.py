"""Meta-learners for stacked base-learner probabilities.

All three follow the scikit-learn estimator protocol so they can be
cloned, grid-searched and persisted uniformly.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .. import persist
from .tree import Tree, grow_classification_tree, grow_newton_tree


class _MetaClassifier(ClassifierMixin, BaseEstimator):
    def _validate_train(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        return X, y_enc

    def _validate_query(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


@persist.register
class KNNClassifier(_MetaClassifier):
    """k nearest neighbours under Euclidean distance.

    Equal distances are resolved in favour of the lower training index and
    tied votes in favour of the lower class.  Probabilities are vote shares.
    """

    def __init__(self, k=6):
        self.k = k

    def fit(self, X, y):
        X, y_enc = self._validate_train(X, y)
        if not 1 <= self.k <= X.shape[0]:
            raise ValueError(f"k={self.k} must lie in 1..{X.shape[0]} (training size)")
        self.X_train_ = X
        self.y_train_ = y_enc
        return self

    def kneighbors(self, X, chunk: int = 256):
        X = self._validate_query(X)
        out = []
        for s in range(0, X.shape[0], chunk):
            diff = X[s:s + chunk, None, :] - self.X_train_[None, :, :]
            dist = np.sqrt((diff * diff).sum(axis=2))
            out.append(np.argsort(dist, axis=1, kind="stable")[:, :self.k])
        return np.concatenate(out) if out else np.zeros((0, self.k), dtype=np.int64)

    def predict_proba(self, X):
        nbrs = self.kneighbors(X)
        votes = self.y_train_[nbrs]
        n_cls = self.classes_.size
        counts = np.zeros((votes.shape[0], n_cls))
        np.add.at(counts, (np.repeat(np.arange(votes.shape[0]), self.k), votes.ravel()), 1.0)
        return counts / self.k

    def _get_state(self):
        return {"X_train": self.X_train_, "y_train": self.y_train_, "classes": self.classes_}

    def _set_state(self, s):
        self.X_train_ = s["X_train"]
        self.y_train_ = np.asarray(s["y_train"], dtype=np.int64)
        self.classes_ = s["classes"]
        self.n_features_in_ = self.X_train_.shape[1]


def _resolve_features(spec, d):
    if spec is None:
        return d
    if spec == "sqrt":
        return max(1, math.isqrt(d))
    if spec == "all":
        return d
    return max(1, min(int(spec), d))


@persist.register
class RandomForestClassifier(_MetaClassifier):
    """Bagged CART trees (Gini) with per-node feature subsampling.

    ``features_per_split`` may be an int, ``"sqrt"`` (floor of sqrt(d)) or
    ``"all"``.  Prediction averages the trees' leaf class frequencies.
    """

    def __init__(self, n_trees=200, max_depth=None, features_per_split="sqrt", bootstrap=True,
                 random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        X, y_enc = self._validate_train(X, y)
        n, d = X.shape
        m = _resolve_features(self.features_per_split, d)
        n_cls = self.classes_.size
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_trees)
        self.trees_ = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees_.append(
                grow_classification_tree(X[idx], y_enc[idx], n_cls, self.max_depth, m, rng)
            )
        return self

    def predict_proba(self, X):
        X = self._validate_query(X)
        if not self.trees_:
            raise ValueError("forest has no trees")
        total = np.zeros((X.shape[0], self.classes_.size))
        for t in self.trees_:
            total += t.predict(X)
        return total / len(self.trees_)

    def _get_state(self):
        return {"classes": self.classes_, "n_features": self.n_features_in_,
                "trees": [t.to_state() for t in self.trees_]}

    def _set_state(self, s):
        self.classes_ = s["classes"]
        self.n_features_in_ = int(s["n_features"])
        self.trees_ = [Tree.from_state(t) for t in s["trees"]]


@persist.register
class GBDTClassifier(_MetaClassifier):
    """Gradient-boosted regression trees on the log-loss.

    Two classes: one tree per iteration on the logistic loss.  More classes:
    one tree per class per iteration on the softmax loss.  Scores start at
    the log class priors; each leaf holds a Newton step scaled by
    ``learning_rate``.  With ``iterations=0`` the class priors are returned.
    """

    def __init__(self, depth=6, iterations=100, learning_rate=0.1, l2_reg=1e-6):
        self.depth = depth
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg

    def _check_params(self):
        if self.depth < 0 or self.iterations < 0 or not self.learning_rate > 0:
            raise ValueError("need depth >= 0, iterations >= 0 and learning_rate > 0")

    def fit(self, X, y, monitor=None):
        """``monitor(iteration, train_log_loss)`` is called after every round, if given."""
        self._check_params()
        X, y_enc = self._validate_train(X, y)
        n = X.shape[0]
        K = self.classes_.size
        self.priors_ = np.bincount(y_enc, minlength=K) / n
        self.trees_ = []
        if K == 1:
            return self
        Y = np.eye(K)[y_enc]
        F = np.tile(self._init_score(), (n, 1))
        for it in range(self.iterations):
            P = self._link(F)
            round_trees = []
            if K == 2:
                p = P[:, 1]
                tree = grow_newton_tree(X, p - Y[:, 1], p * (1 - p), self.depth, self.l2_reg)
                round_trees.append(tree)
                F[:, 0] += self.learning_rate * tree.predict(X)[:, 0]
            else:
                for k in range(K):
                    p = P[:, k]
                    tree = grow_newton_tree(X, p - Y[:, k], p * (1 - p), self.depth, self.l2_reg)
                    round_trees.append(tree)
                for k, tree in enumerate(round_trees):
                    F[:, k] += self.learning_rate * tree.predict(X)[:, 0]
            self.trees_.append(round_trees)
            if monitor is not None:
                monitor(it, log_loss(self._link(F), y_enc))
        return self

    def _init_score(self):
        if self.classes_.size == 2:
            p = self.priors_[1]
            return np.array([np.log(p / (1 - p))])
        return np.log(self.priors_)

    def _link(self, F):
        if self.classes_.size == 2:
            z = F[:, 0]
            p1 = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
            return np.column_stack([1.0 - p1, p1])
        e = np.exp(F - F.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def decision_function(self, X):
        X = self._validate_query(X)
        F = np.tile(self._init_score(), (X.shape[0], 1))
        for round_trees in self.trees_:
            for k, tree in enumerate(round_trees):
                F[:, k] += self.learning_rate * tree.predict(X)[:, 0]
        return F

    def predict_proba(self, X):
        X = self._validate_query(X)
        if self.classes_.size == 1 or not self.trees_:
            # no boosting rounds: the model is its initial score, i.e. the priors
            return np.tile(self.priors_, (X.shape[0], 1))
        return self._link(self.decision_function(X))

    def _get_state(self):
        return {"classes": self.classes_, "priors": self.priors_, "n_features": self.n_features_in_,
                "trees": [[t.to_state() for t in r] for r in self.trees_]}

    def _set_state(self, s):
        self.classes_ = s["classes"]
        self.priors_ = np.asarray(s["priors"], dtype=np.float64)
        self.n_features_in_ = int(s["n_features"])
        self.trees_ = [[Tree.from_state(t) for t in r] for r in s["trees"]]


def log_loss(P, y_enc) -> float:
    p = np.clip(P[np.arange(y_enc.size), y_enc], 1e-15, 1.0)
    return float(-np.mean(np.log(p)))


@persist.register
class PassThroughClassifier(_MetaClassifier):
    """Baseline head: returns one base learner's probability block unchanged."""

    def __init__(self, block=0, n_classes=5):
        self.block = block
        self.n_classes = n_classes

    def fit(self, X, y):
        X, _ = self._validate_train(X, y)
        if X.shape[1] < (self.block + 1) * self.n_classes:
            raise ValueError(f"no probability block {self.block} in {X.shape[1]} columns")
        self.classes_ = np.arange(self.n_classes)
        return self

    def predict_proba(self, X):
        X = self._validate_query(X)
        c = self.n_classes
        return X[:, self.block * c:(self.block + 1) * c].copy()

    def _get_state(self):
        return {"n_features": self.n_features_in_}

    def _set_state(self, s):
        self.n_features_in_ = int(s["n_features"])
        self.classes_ = np.arange(self.n_classes)
