"""Differentiable layers on NHWC float64 arrays.

Each layer exposes ``forward(params, x, train, rng) -> (out, cache)`` and
``backward(params, dout, cache) -> (dx, grads)``.  Parameters live in a
flat dict owned by the network; layers only know their keys.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Conv3x3:
    """3x3 convolution, stride 1, zero 'same' padding."""

    def __init__(self, name: str, in_channels: int, out_channels: int):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.w_key = f"{name}.W"
        self.b_key = f"{name}.b"

    def param_shapes(self):
        return {self.w_key: (3, 3, self.in_channels, self.out_channels), self.b_key: (self.out_channels,)}

    def fan_in(self):
        return 9 * self.in_channels

    def forward(self, params, x, train, rng):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected input (B, H, W, {self.in_channels}), got {x.shape}"
            )
        b, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(b * h * w, c * 9)
        wmat = params[self.w_key].transpose(2, 0, 1, 3).reshape(c * 9, self.out_channels)
        out = cols @ wmat + params[self.b_key]
        return out.reshape(b, h, w, self.out_channels), (cols, x.shape)

    def backward(self, params, dout, cache):
        cols, (b, h, w, c) = cache
        f = self.out_channels
        d2 = dout.reshape(-1, f)
        dw = (cols.T @ d2).reshape(c, 3, 3, f).transpose(1, 2, 0, 3)
        db = d2.sum(axis=0)
        wmat = params[self.w_key].transpose(2, 0, 1, 3).reshape(c * 9, f)
        dcols = (d2 @ wmat.T).reshape(b, h, w, c, 3, 3)
        dxp = np.zeros((b, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
        return dxp[:, 1:-1, 1:-1, :], {self.w_key: dw, self.b_key: db}


class ReLU:
    name = "relu"

    def param_shapes(self):
        return {}

    def forward(self, params, x, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, dout, mask):
        return dout * mask, {}


class MaxPool2:
    """2x2 max pooling, stride 2; a trailing odd row/column is dropped."""

    name = "maxpool"

    def param_shapes(self):
        return {}

    def forward(self, params, x, train, rng):
        b, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        if h2 < 1 or w2 < 1:
            raise ShapeError(f"maxpool: spatial size {h}x{w} is too small to pool")
        win = x[:, :2 * h2, :2 * w2, :].reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(b, h2, w2, c, 4)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, params, dout, cache):
        arg, (b, h, w, c) = cache
        h2, w2 = h // 2, w // 2
        routed = (np.arange(4) == arg[..., None]) * dout[..., None]
        routed = routed.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros((b, h, w, c))
        dx[:, :2 * h2, :2 * w2, :] = routed.reshape(b, 2 * h2, 2 * w2, c)
        return dx, {}


class GlobalAvgPool:
    name = "global_avg_pool"

    def param_shapes(self):
        return {}

    def forward(self, params, x, train, rng):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, params, dout, shape):
        b, h, w, c = shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), shape).copy(), {}


class Dense:
    def __init__(self, name: str, in_features: int, out_features: int):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self.w_key = f"{name}.W"
        self.b_key = f"{name}.b"

    def param_shapes(self):
        return {self.w_key: (self.in_features, self.out_features), self.b_key: (self.out_features,)}

    def fan_in(self):
        return self.in_features

    def forward(self, params, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected input (B, {self.in_features}), got {x.shape}")
        return x @ params[self.w_key] + params[self.b_key], x

    def backward(self, params, dout, x):
        grads = {self.w_key: x.T @ dout, self.b_key: dout.sum(axis=0)}
        return dout @ params[self.w_key].T, grads


class Dropout:
    """Inverted dropout: kept units are scaled by 1/(1-rate) while training."""

    name = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def param_shapes(self):
        return {}

    def forward(self, params, x, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, params, dout, mask):
        return (dout if mask is None else dout * mask), {}


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
