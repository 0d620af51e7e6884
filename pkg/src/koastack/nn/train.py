"""Mini-batch training, inference and finite-difference gradient checking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .loss import LossSpec, weighted_ce
from .model import EVAL, TRAIN, Network, backward, forward
from .optim import OptimizerState, sgd_momentum_step

logger = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """Training diverged (non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0


HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy")


def _labels_for(model: Network, probs):
    if model.binary:
        return (probs[:, 0] >= 0.5).astype(np.int64)
    return probs.argmax(axis=1)


def evaluate_loss(model: Network, X, y, spec: LossSpec, batch_size: int = 256):
    probs = predict_raw(model, X, batch_size)
    return weighted_ce(probs, y, spec), float(np.mean(_labels_for(model, probs) == y))


def train(model: Network, X, y, spec: LossSpec, config: TrainConfig = TrainConfig(),
          X_val=None, y_val=None) -> list[dict]:
    """Fit ``model`` in place with SGD-momentum; returns per-epoch history rows.

    Runs ``epochs * ceil(N / batch_size)`` steps.  Shuffling and dropout
    draw from generators seeded by ``config.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("training split is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} images but {y.shape[0]} labels")
    state = OptimizerState.for_params(model.params, config.lr, config.momentum)
    shuffle_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    n = X.shape[0]
    steps_per_epoch = math.ceil(n / config.batch_size)
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            # overflow shows up as a non-finite loss or parameter, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                probs, cache = forward(model, X[idx], TRAIN, dropout_rng)
                loss = weighted_ce(probs, y[idx], spec)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss {loss} at step {step} (lr={config.lr})")
                grads = backward(model, cache, y[idx], spec)
                sgd_momentum_step(model.params, grads, state)
            if not all(np.all(np.isfinite(w)) for w in model.params.values()):
                raise NumericError(f"non-finite parameters after step {step} (lr={config.lr})")
            model.version += 1
            step += 1
            loss_sum += loss * idx.size
            correct += int(np.sum(_labels_for(model, probs) == y[idx]))
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_accuracy": correct / n,
            "val_loss": float("nan"),
            "val_accuracy": float("nan"),
        }
        if X_val is not None and len(X_val):
            row["val_loss"], row["val_accuracy"] = evaluate_loss(model, X_val, np.asarray(y_val), spec)
        logger.debug("epoch %d: %s", epoch, row)
        history.append(row)
    return history


def predict_raw(model: Network, X, batch_size: int = 256):
    """Head outputs in eval mode: (N, 5) softmax rows or (N, 1) sigmoid values."""
    X = np.asarray(X, dtype=np.float64)
    out = [forward(model, X[i:i + batch_size], EVAL)[0] for i in range(0, X.shape[0], batch_size)]
    if not out:
        return np.zeros((0, model.n_outputs))
    return np.concatenate(out)


def predict_proba(model: Network, X, batch_size: int = 256):
    """Class probabilities; the sigmoid head is expanded to ``[1 - p, p]``."""
    probs = predict_raw(model, X, batch_size)
    if model.binary:
        return np.hstack([1.0 - probs, probs])
    return probs


def grad_check(model: Network, batch, labels, spec: LossSpec, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Evaluated in eval mode so dropout is inactive.
    """
    probs, cache = forward(model, batch, EVAL)
    analytic = backward(model, cache, labels, spec)
    worst = 0.0
    for k, w in model.params.items():
        flat = w.reshape(-1)
        ga = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = weighted_ce(forward(model, batch, EVAL)[0], labels, spec)
            flat[i] = orig - eps
            lm = weighted_ce(forward(model, batch, EVAL)[0], labels, spec)
            flat[i] = orig
            gn = (lp - lm) / (2.0 * eps)
            rel = abs(ga[i] - gn) / max(1e-8, abs(ga[i]) + abs(gn))
            worst = max(worst, rel)
    return worst
