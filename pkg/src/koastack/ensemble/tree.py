"""Array-backed binary decision trees.

Two growers share one layout: CART classification trees split on Gini
impurity, and second-order regression trees split on the Newton gain
``G_L^2/H_L + G_R^2/H_R - G^2/H`` used by gradient boosting.
A sample goes left when ``x[feature] <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray    # int64, LEAF for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int64 child index
    right: np.ndarray
    value: np.ndarray      # (n_nodes, n_outputs)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_state(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_state(cls, s: dict) -> "Tree":
        return cls(
            np.asarray(s["feature"], dtype=np.int64), np.asarray(s["threshold"], dtype=np.float64),
            np.asarray(s["left"], dtype=np.int64), np.asarray(s["right"], dtype=np.int64),
            np.asarray(s["value"], dtype=np.float64),
        )


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def split(self, node, feature, threshold, left, right):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
        )


def _sorted_view(X, features):
    """Per-feature sort of the node's rows; also marks valid cut positions."""
    xs = X[:, features]
    order = np.argsort(xs, axis=0, kind="stable")
    vals = np.take_along_axis(xs, order, axis=0)
    valid = vals[1:] > vals[:-1]  # cut between i and i+1 only where values differ
    return order, vals, valid


def _best_gini_split(X, y_onehot, features):
    n = X.shape[0]
    order, vals, valid = _sorted_view(X, features)
    counts = y_onehot[order]                       # (n, m, C)
    left = np.cumsum(counts, axis=0)[:-1]          # (n-1, m, C)
    total = left[-1] + counts[-1]
    right = total - left
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    # n_l * gini_l + n_r * gini_r, with gini = 1 - sum(p^2)
    cost = (nl - (left ** 2).sum(axis=2) / nl) + (nr - (right ** 2).sum(axis=2) / nr)
    cost = np.where(valid, cost, np.inf)
    flat = int(np.argmin(cost.T))  # feature-major: earlier candidate wins ties
    j, i = divmod(flat, n - 1)
    if not np.isfinite(cost[i, j]):
        return None
    return features[j], 0.5 * (vals[i, j] + vals[i + 1, j]), cost[i, j]


def grow_classification_tree(X, y, n_classes: int, max_depth=None, max_features=None,
                             rng: np.random.Generator | None = None, min_samples_split: int = 2) -> Tree:
    """CART with Gini impurity; leaves hold class frequencies.

    ``max_features`` candidate features are drawn per node; if none of them
    admits a split, further features are drawn until one does or all have
    been tried.
    """
    n, d = X.shape
    m = d if max_features is None else max(1, min(int(max_features), d))
    onehot = np.eye(n_classes)[y]
    b = _Builder()
    stack = [(np.arange(n), 0, b.add(onehot.mean(axis=0)))]
    while stack:
        idx, depth, node = stack.pop()
        counts = onehot[idx].sum(axis=0)
        if (idx.size < min_samples_split or np.count_nonzero(counts) <= 1
                or (max_depth is not None and depth >= max_depth)):
            continue
        perm = np.arange(d) if m == d or rng is None else rng.permutation(d)
        best = None
        for start in range(0, d, m):
            best = _best_gini_split(X[idx], onehot[idx], perm[start:start + m])
            if best is not None:
                break
        if best is None:
            continue
        feat, thr, _ = best
        go_left = X[idx, feat] <= thr
        li, ri = idx[go_left], idx[~go_left]
        ln = b.add(onehot[li].mean(axis=0))
        rn = b.add(onehot[ri].mean(axis=0))
        b.split(node, feat, thr, ln, rn)
        stack.append((ri, depth + 1, rn))
        stack.append((li, depth + 1, ln))
    return b.build()


def _best_newton_split(X, g, h, reg):
    n, d = X.shape
    features = np.arange(d)
    order, vals, valid = _sorted_view(X, features)
    gl = np.cumsum(g[order], axis=0)[:-1]
    hl = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    gr, hr = G - gl, H - hl
    gain = gl ** 2 / (hl + reg) + gr ** 2 / (hr + reg) - G ** 2 / (H + reg)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T))
    j, i = divmod(flat, n - 1)
    if not gain[i, j] > 0:
        return None
    return j, 0.5 * (vals[i, j] + vals[i + 1, j])


def grow_newton_tree(X, g, h, max_depth: int, reg: float = 1e-6) -> Tree:
    """Depth-limited regression tree on (gradient, hessian) pairs.

    Leaf values are Newton steps ``-sum(g) / (sum(h) + reg)``.
    """
    n = X.shape[0]
    b = _Builder()

    def leaf(idx):
        return [-g[idx].sum() / (h[idx].sum() + reg)]

    all_idx = np.arange(n)
    stack = [(all_idx, 0, b.add(leaf(all_idx)))]
    while stack:
        idx, depth, node = stack.pop()
        if depth >= max_depth or idx.size < 2:
            continue
        best = _best_newton_split(X[idx], g[idx], h[idx], reg)
        if best is None:
            continue
        feat, thr = best
        go_left = X[idx, feat] <= thr
        li, ri = idx[go_left], idx[~go_left]
        ln, rn = b.add(leaf(li)), b.add(leaf(ri))
        b.split(node, feat, thr, ln, rn)
        stack.append((ri, depth + 1, rn))
        stack.append((li, depth + 1, ln))
    return b.build()
