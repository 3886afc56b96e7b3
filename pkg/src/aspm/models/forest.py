"""Random forest of size-budgeted CART trees (Gini, best-first growth)."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ForestSpec:
    n_trees: int = 50
    max_nodes: int = 100
    max_features: int | None = None   # None: round(sqrt(n_features))

    def __post_init__(self):
        if self.n_trees < 1 or self.max_nodes < 1:
            raise ValueError("n_trees and max_nodes must be positive")


@dataclass
class Tree:
    feature: np.ndarray     # -1 marks a leaf
    threshold: np.ndarray   # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # (n_nodes, 2) class frequencies
    oob: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``x``."""
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = x[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]


@dataclass
class Forest:
    spec: ForestSpec
    trees: list
    n_features: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {x.shape}")
        acc = np.zeros((len(x), 2))
        for tree in self.trees:
            acc += tree.predict_proba(x)
        return acc / len(self.trees)

    def oob_predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Average over the trees for which each training row was out of bag.

        Rows that were in every bootstrap sample get NaN.
        """
        acc = np.zeros((len(x), 2))
        cnt = np.zeros(len(x))
        for tree in self.trees:
            if tree.oob.size:
                acc[tree.oob] += tree.predict_proba(x[tree.oob])
                cnt[tree.oob] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            return acc / cnt[:, None]


def _weighted_gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    # n * gini = 2 * pos * neg / n
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, 2.0 * pos * (n - pos) / n, 0.0)


def _best_split(x, y, idx, n_sub, rng):
    yn = y[idx]
    m = idx.size
    pos = int(yn.sum())
    if pos == 0 or pos == m or m < 2:
        return None
    parent = 2.0 * pos * (m - pos) / m
    feats = np.sort(rng.choice(x.shape[1], size=n_sub, replace=False))
    v = x[np.ix_(idx, feats)]
    order = np.argsort(v, axis=0, kind="stable")
    vs = np.take_along_axis(v, order, axis=0)
    ys = yn[order]
    cum = np.cumsum(ys, axis=0)[:-1]                  # positives left of each cut
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    cost = _weighted_gini(cum, n_left) + _weighted_gini(pos - cum, m - n_left)
    valid = vs[:-1] < vs[1:]
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    flat = int(np.argmin(cost))                       # row-major: first cut, first feature
    i, j = divmod(flat, len(feats))
    gain = parent - cost[i, j]
    thr = 0.5 * (vs[i, j] + vs[i + 1, j])
    if not thr < vs[i + 1, j]:
        thr = vs[i, j]
    f = int(feats[j])
    mask = x[idx, f] <= thr
    return gain, f, float(thr), idx[mask], idx[~mask]


def _fit_tree(x, y, spec: ForestSpec, n_sub: int, rng: np.random.Generator) -> Tree:
    n = len(y)
    boot = rng.integers(0, n, size=n)
    inbag = np.zeros(n, dtype=bool)
    inbag[boot] = True
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [None]

    def leaf_value(idx):
        p = y[idx].mean() if idx.size else 0.5
        return (1.0 - p, p)

    value[0] = leaf_value(boot)
    heap = []
    counter = 0
    split = _best_split(x, y, boot, n_sub, rng)
    if split is not None:
        heap.append((-split[0], counter, 0, split))
    while heap and len(feature) + 2 <= spec.max_nodes:
        _, _, node, (gain, f, thr, li, ri) = heapq.heappop(heap)
        feature[node], threshold[node] = f, thr
        for child_idx, side in ((li, left), (ri, right)):
            cid = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(leaf_value(child_idx))
            side[node] = cid
            s = _best_split(x, y, child_idx, n_sub, rng)
            if s is not None:
                counter += 1
                heapq.heappush(heap, (-s[0], counter, cid, s))
    return Tree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value, dtype=np.float64),
        np.flatnonzero(~inbag),
    )


def rf_fit(x: np.ndarray, y: np.ndarray, spec: ForestSpec = ForestSpec(), seed: int = 0) -> Forest:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("x must be (n, d) with one label per row")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if len(np.unique(y)) < 2:
        raise ValueError("random forest needs both classes in the training data")
    d = x.shape[1]
    n_sub = spec.max_features or max(1, int(round(math.sqrt(d))))
    n_sub = min(n_sub, d)
    seeds = np.random.SeedSequence(seed).spawn(spec.n_trees)
    trees = [_fit_tree(x, y, spec, n_sub, np.random.default_rng(s)) for s in seeds]
    return Forest(spec, trees, d)


def rf_predict_proba(forest: Forest, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return forest.predict_proba(x[None, :] if x.ndim == 1 else x)
