"""Class-weighted cross-entropy losses and their output-layer gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import ClassWeights

EPS = 1e-12


@dataclass(frozen=True)
class LossSpec:
    kind: str  # "categorical" | "binary"
    weights: ClassWeights

    def __post_init__(self):
        if self.kind not in ("categorical", "binary"):
            raise ValueError(f"loss kind must be 'categorical' or 'binary', got {self.kind!r}")
        if self.kind == "binary" and len(self.weights) != 2:
            raise ValueError("binary loss needs exactly 2 class weights")
        if self.kind == "categorical" and len(self.weights) < 2:
            raise ValueError("categorical loss needs at least 2 class weights")

    @property
    def n_classes(self) -> int:
        return len(self.weights)

    @classmethod
    def unweighted(cls, kind: str, n_classes: int) -> "LossSpec":
        return cls(kind, ClassWeights.uniform(2 if kind == "binary" else n_classes))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}, got range {labels.min()}..{labels.max()}")
    return labels


def _prob_true(y, labels, spec):
    """Probability assigned to the true class, and the matching weight."""
    alpha = spec.weights.weights[labels]
    if spec.kind == "categorical":
        if y.ndim != 2 or y.shape[1] != spec.n_classes:
            raise ValueError(f"expected probabilities of shape (B, {spec.n_classes}), got {y.shape}")
        return y[np.arange(labels.size), labels], alpha
    p = y.reshape(-1)
    return np.where(labels == 1, p, 1.0 - p), alpha


def per_sample_loss(y, labels, spec: LossSpec):
    labels = _check_labels(labels, spec.n_classes)
    pt, alpha = _prob_true(np.asarray(y, dtype=np.float64), labels, spec)
    return -alpha * np.log(np.clip(pt, EPS, 1.0 - EPS))


def weighted_ce(y, labels, spec: LossSpec) -> float:
    """Mean over the batch of ``-alpha_true * log(p_true)``.

    For the binary head ``y`` holds P(class 1); ``alpha_1`` weights the
    positive term and ``alpha_0`` the negative one.
    """
    return float(per_sample_loss(y, labels, spec).mean())


def output_grad(y, labels, spec: LossSpec):
    """Gradient of the mean loss w.r.t. the pre-activation logits.

    Both heads reduce to ``alpha_true * (p - target) / B``; samples whose
    true-class probability sits on the clamp get zero gradient.
    """
    labels = _check_labels(labels, spec.n_classes)
    pt, alpha = _prob_true(y, labels, spec)
    live = (pt > EPS) & (pt < 1.0 - EPS)
    scale = (alpha * live / labels.size)[:, None]
    if spec.kind == "categorical":
        target = np.zeros_like(y)
        target[np.arange(labels.size), labels] = 1.0
        return scale * (y - target)
    return scale * (y - labels.reshape(-1, 1))
