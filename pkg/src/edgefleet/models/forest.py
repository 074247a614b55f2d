"""Bagged regression trees with variance-reduction splits.

Trees are flat node arrays. Node 0 is the root, children always sit at higher
indices than their parent, and leaves carry feature == -1 and no children.
A sample goes left when x[feature] <= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

LEAF = -1


@dataclass(frozen=True)
class RFRConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_leaf: int = 5
    max_features: int = 2


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # int64
    threshold: np.ndarray
    left: np.ndarray  # int64
    right: np.ndarray  # int64
    value: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.feature)
        if n == 0:
            raise ValueError("tree must have at least a root node")
        for arr in (self.threshold, self.left, self.right, self.value):
            if len(arr) != n:
                raise ValueError("tree node arrays differ in length")
        idx = np.arange(n)
        leaf = self.feature == LEAF
        if np.any(self.left[leaf] != LEAF) or np.any(self.right[leaf] != LEAF):
            raise ValueError("leaf nodes must not have children")
        inner = ~leaf
        for child in (self.left[inner], self.right[inner]):
            if np.any(child <= idx[inner]) or np.any(child >= n):
                raise ValueError("child indices must be greater than their parent's")

    @classmethod
    def leaf(cls, value: float) -> Tree:
        return cls(
            np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]), np.array([value])
        )

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> Tree:
        return cls(
            np.array([feature, LEAF, LEAF]),
            np.array([threshold, 0.0, 0.0]),
            np.array([1, LEAF, LEAF]),
            np.array([2, LEAF, LEAF]),
            np.array([0.0, left_value, right_value]),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, Xs: np.ndarray) -> np.ndarray:
        Xs = np.ascontiguousarray(np.atleast_2d(Xs), dtype=np.float64)
        return _predict_one_tree(
            Xs, self.feature, self.threshold, self.left, self.right, self.value
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "value")
        )


@dataclass(frozen=True, eq=False)
class RFRParams:
    trees: tuple[Tree, ...]
    n_trees: int
    max_depth: int
    min_leaf: int
    max_features: int
    seed: int

    def __post_init__(self) -> None:
        if len(self.trees) == 0:
            raise ValueError("forest needs at least one tree")

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, ...]:
        width = max(t.n_nodes for t in self.trees)
        shape = (len(self.trees), width)
        feature = np.full(shape, LEAF, dtype=np.int64)
        threshold = np.zeros(shape)
        left = np.full(shape, LEAF, dtype=np.int64)
        right = np.full(shape, LEAF, dtype=np.int64)
        value = np.zeros(shape)
        for i, t in enumerate(self.trees):
            n = t.n_nodes
            feature[i, :n] = t.feature
            threshold[i, :n] = t.threshold
            left[i, :n] = t.left
            right[i, :n] = t.right
            value[i, :n] = t.value
        return feature, threshold, left, right, value

    def predict(self, Xs: np.ndarray) -> np.ndarray:
        Xs = np.ascontiguousarray(np.atleast_2d(Xs), dtype=np.float64)
        return _predict_forest(Xs, *self._arrays)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RFRParams):
            return NotImplemented
        return (
            (self.n_trees, self.max_depth, self.min_leaf, self.max_features, self.seed)
            == (other.n_trees, other.max_depth, other.min_leaf, other.max_features, other.seed)
            and self.trees == other.trees
        )


@njit(cache=True)
def _predict_one_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _predict_forest(X, feature, threshold, left, right, value):
    n_trees = feature.shape[0]
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        total = 0.0
        for t in range(n_trees):
            node = 0
            while feature[t, node] != -1:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            total += value[t, node]
        out[i] = total / n_trees
    return out


@njit(cache=True)
def _grow_tree(Xt, y, counts, sorted_idx, max_depth, min_leaf, max_features, keys):
    """Grow one tree on a bootstrap sample given as per-row multiplicities.

    ``Xt`` is the feature-major training matrix and ``sorted_idx[f]`` the rows
    ordered by feature f. Every node owns the same [start, end) segment in all
    feature orders; a split stable-partitions each segment, so nothing is
    re-sorted after the root.
    """
    d, n_rows = Xt.shape
    m = 0
    for i in range(n_rows):
        m += counts[i]
    max_nodes = keys.shape[0]
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)

    orders = np.empty((d, m), dtype=np.int32)
    for f in range(d):
        pos = 0
        for k in range(n_rows):
            row = sorted_idx[f, k]
            for _ in range(counts[row]):
                orders[f, pos] = row
                pos += 1
    go_left = np.zeros(n_rows, dtype=np.bool_)
    buf = np.empty(m, dtype=np.int32)
    xs = np.empty(m)
    ys = np.empty(m)

    st_node = np.empty(max_nodes, dtype=np.int64)
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_end = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    st_sum = np.empty(max_nodes)
    st_sq = np.empty(max_nodes)
    root_sum = 0.0
    root_sq = 0.0
    for i in range(n_rows):
        root_sum += counts[i] * y[i]
        root_sq += counts[i] * y[i] * y[i]
    st_sum[0] = root_sum
    st_sq[0] = root_sq
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_start[top]
        e = st_end[top]
        depth = st_depth[top]
        n = e - s
        total = st_sum[top]
        total_sq = st_sq[top]
        value[node] = total / n
        if depth >= max_depth or n < 2 * min_leaf:
            continue
        if total_sq - total * total / n <= 1e-12 * n:
            continue

        best_score = total * total / n
        best_f = -1
        best_nl = 0
        best_thr = 0.0
        best_cum = 0.0
        best_sq = 0.0
        chosen = np.argsort(keys[node])[:max_features]
        for c in range(chosen.shape[0]):
            f = chosen[c]
            xf = Xt[f]
            for k in range(n):
                p = orders[f, s + k]
                xs[k] = xf[p]
                ys[k] = y[p]
            cum = 0.0
            cum_sq = 0.0
            for k in range(min_leaf - 1):
                cum += ys[k]
                cum_sq += ys[k] * ys[k]
            for k in range(min_leaf - 1, n - min_leaf):
                cum += ys[k]
                cum_sq += ys[k] * ys[k]
                if xs[k] == xs[k + 1]:
                    continue
                nl = k + 1
                rest = total - cum
                score = cum * cum / nl + rest * rest / (n - nl)
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_nl = nl
                    best_cum = cum
                    best_sq = cum_sq
                    thr = 0.5 * (xs[k] + xs[k + 1])
                    if thr >= xs[k + 1]:
                        thr = xs[k]
                    best_thr = thr
        if best_f < 0:
            continue

        for k in range(s, e):
            go_left[orders[best_f, k]] = (k - s) < best_nl
        for f in range(d):
            if f == best_f:
                continue  # already in split order
            li = s
            ri = 0
            for k in range(s, e):
                p = orders[f, k]
                g = go_left[p]
                orders[f, li] = p
                buf[ri] = p
                li += g
                ri += 1 - g
            for k in range(ri):
                orders[f, li + k] = buf[k]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        mid = s + best_nl
        st_node[top] = rid
        st_start[top] = mid
        st_end[top] = e
        st_depth[top] = depth + 1
        st_sum[top] = total - best_cum
        st_sq[top] = total_sq - best_sq
        top += 1
        st_node[top] = lid
        st_start[top] = s
        st_end[top] = mid
        st_depth[top] = depth + 1
        st_sum[top] = best_cum
        st_sq[top] = best_sq
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


def fit_rfr(X: np.ndarray, y: np.ndarray, config: RFRConfig = RFRConfig(), seed: int = 0) -> RFRParams:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    max_nodes = 2 ** (config.max_depth + 1) - 1
    max_features = min(config.max_features, d)
    Xt = np.ascontiguousarray(X.T)
    sorted_idx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    trees = []
    for _ in range(config.n_trees):
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        keys = rng.random((max_nodes, d))
        arrays = _grow_tree(
            Xt, y, counts, sorted_idx, config.max_depth, config.min_leaf, max_features, keys
        )
        trees.append(Tree(*arrays))
    return RFRParams(
        tuple(trees), config.n_trees, config.max_depth, config.min_leaf, config.max_features, seed
    )
