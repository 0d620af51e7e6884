from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .. import persist
from ..dataset import ClassWeights, class_weights
from .loss import LossSpec
from .model import Network
from .train import TrainConfig, predict_proba, train


def _check_images(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[3] != 1:
        raise ValueError(f"expected images of shape (N, H, W, 1), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


@persist.register
class CNNClassifier(ClassifierMixin, BaseEstimator):
    """Miniature CNN with the 320-unit grading head, trained by SGD-momentum.

    Parameters
    ----------
    channels : tuple of int
        Output channels of each conv/ReLU/max-pool block.
    task : {"multiclass", "binary"}
        Softmax over ``n_classes`` outputs, or a single sigmoid unit.
    class_weight : "balanced", None or array-like
        "balanced" uses inverse-frequency weights computed from ``y``.
    """

    def __init__(self, channels=(8, 16, 32), dense_units=320, dropout=0.2, task="multiclass",
                 n_classes=5, learning_rate=0.001, momentum=0.9, epochs=10, batch_size=32,
                 class_weight="balanced", random_state=0):
        self.channels = channels
        self.dense_units = dense_units
        self.dropout = dropout
        self.task = task
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weight = class_weight
        self.random_state = random_state

    def _n_classes(self):
        if self.task == "binary":
            return 2
        if self.task != "multiclass":
            raise ValueError(f"task must be 'multiclass' or 'binary', got {self.task!r}")
        return int(self.n_classes)

    def _loss_spec(self, y):
        n = self._n_classes()
        kind = "binary" if n == 2 else "categorical"
        if self.class_weight is None:
            weights = ClassWeights.uniform(n)
        elif isinstance(self.class_weight, str):
            if self.class_weight != "balanced":
                raise ValueError(f"unknown class_weight {self.class_weight!r}")
            weights = class_weights(y, n)
        else:
            weights = ClassWeights(np.asarray(self.class_weight, dtype=np.float64))
        return LossSpec(kind, weights)

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_images(X)
        y = np.asarray(y, dtype=np.int64)
        n = self._n_classes()
        if y.size and (y.min() < 0 or y.max() >= n):
            raise ValueError(f"labels must lie in 0..{n - 1}")
        self.loss_spec_ = self._loss_spec(y)
        self.network_ = Network(
            channels=tuple(self.channels), n_outputs=1 if n == 2 else n,
            dense_units=self.dense_units, dropout=self.dropout, seed=self.random_state,
        )
        config = TrainConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size, self.random_state)
        if X_val is not None:
            X_val = _check_images(X_val)
            y_val = np.asarray(y_val, dtype=np.int64)
        self.history_ = train(self.network_, X, y, self.loss_spec_, config, X_val, y_val)
        self.classes_ = np.arange(n)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return predict_proba(self.network_, _check_images(X))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def _get_state(self):
        return {
            "params": self.network_.params,
            "class_weights": self.loss_spec_.weights.weights,
            "history": self.history_,
        }

    def _set_state(self, state):
        n = self._n_classes()
        self.network_ = Network(
            channels=tuple(self.channels), n_outputs=1 if n == 2 else n,
            dense_units=self.dense_units, dropout=self.dropout, seed=self.random_state,
            params={k: np.asarray(v, dtype=np.float64) for k, v in state["params"].items()},
        )
        self.loss_spec_ = LossSpec("binary" if n == 2 else "categorical", ClassWeights(state["class_weights"]))
        self.history_ = state["history"]
        self.classes_ = np.arange(n)
