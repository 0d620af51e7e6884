"""Miniature CNN backbone with the grading head.

backbone (conv3x3 -> ReLU -> maxpool2) x n  ->  global average pool  ->
dense(320, ReLU) -> dropout -> dense(5, softmax) | dense(1, sigmoid)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv3x3, Dense, Dropout, GlobalAvgPool, MaxPool2, ReLU, ShapeError, sigmoid, softmax
from .loss import LossSpec, output_grad

TRAIN = "train"
EVAL = "eval"


@dataclass
class Network:
    """Parameters plus layer graph.  ``n_outputs`` is 1 for the sigmoid head."""

    channels: tuple = (8, 16, 32)
    n_outputs: int = 5
    dense_units: int = 320
    dropout: float = 0.2
    seed: int = 0
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be positive")
        if self.n_outputs == 2:
            raise ValueError("use n_outputs=1 (sigmoid) for binary tasks")
        self.layers = []
        c_in = 1
        for i, c in enumerate(self.channels):
            self.layers += [Conv3x3(f"conv{i}", c_in, c), ReLU(), MaxPool2()]
            c_in = c
        self.layers += [
            GlobalAvgPool(),
            Dense("dense", c_in, self.dense_units),
            ReLU(),
            Dropout(self.dropout),
            Dense("out", self.dense_units, self.n_outputs),
        ]
        self.version = 0
        if not self.params:
            self.params = self._init_params()
        else:
            for k, shape in self.param_shapes().items():
                if k not in self.params or self.params[k].shape != shape:
                    raise ShapeError(f"parameter {k} missing or not of shape {shape}")

    @property
    def binary(self) -> bool:
        return self.n_outputs == 1

    @property
    def n_classes(self) -> int:
        return 2 if self.binary else self.n_outputs

    def param_shapes(self) -> dict:
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def _init_params(self):
        # fan-in scaled uniform weights, zero biases
        rng = np.random.default_rng(self.seed)
        params = {}
        for layer in self.layers:
            for k, shape in layer.param_shapes().items():
                if k.endswith(".W"):
                    limit = np.sqrt(6.0 / layer.fan_in())
                    params[k] = rng.uniform(-limit, limit, size=shape)
                else:
                    params[k] = np.zeros(shape)
        return params

    def config(self) -> dict:
        return {
            "channels": list(self.channels),
            "n_outputs": self.n_outputs,
            "dense_units": self.dense_units,
            "dropout": self.dropout,
            "seed": self.seed,
        }


@dataclass
class Cache:
    layer_caches: list
    version: int
    batch_size: int
    probs: np.ndarray
    mode: str


def forward(model: Network, batch, mode: str = EVAL, rng: np.random.Generator | None = None):
    """Run ``batch`` of shape (B, H, W, 1); returns (probabilities, cache)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[3] != 1:
        raise ShapeError(f"input: expected batch of shape (B, H, W, 1), got {x.shape}")
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == TRAIN
    if train and rng is None:
        rng = np.random.default_rng(model.seed)
    caches = []
    for layer in model.layers:
        x, c = layer.forward(model.params, x, train, rng)
        caches.append(c)
    probs = sigmoid(x) if model.binary else softmax(x)
    return probs, Cache(caches, model.version, probs.shape[0], probs, mode)


def backward(model: Network, cache: Cache, labels, spec: LossSpec) -> dict:
    """Exact gradients of the mean batch loss for every parameter."""
    if cache.version != model.version:
        raise ValueError("stale cache: parameters changed since the forward pass")
    labels = np.asarray(labels)
    if labels.shape[0] != cache.batch_size:
        raise ValueError(f"cache holds {cache.batch_size} samples but {labels.shape[0]} labels were given")
    if (spec.kind == "binary") != model.binary:
        raise ValueError(f"{spec.kind} loss does not match a network with {model.n_outputs} outputs")
    d = output_grad(cache.probs, labels, spec)
    grads = {}
    for layer, c in zip(reversed(model.layers), reversed(cache.layer_caches)):
        d, g = layer.backward(model.params, d, c)
        grads.update(g)
    return {k: grads[k] for k in model.params}
