"""Isolation forest anomaly scorer.

Trees isolate samples by recursive uniform splits: a feature is drawn at
random, a threshold uniformly inside the node's value range, and rows go
left when strictly below it.  The anomaly score of a point is
``2 ** (-E[h] / c(n))`` where ``E[h]`` averages path lengths over trees,
each path extended by the expected subtree depth ``c(leaf_size)`` at the
reached leaf, and ``c(n)`` normalizes by the training subsample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EULER_GAMMA = 0.5772156649


@dataclass(frozen=True)
class IfConfig:
    n_trees: int = 100
    subsample_size: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.subsample_size < 2:
            raise ValueError("subsample_size must be at least 2")


def average_path_length(n) -> np.ndarray | float:
    """Expected path length c(n) of an unsuccessful BST search among n items.

    c(n) = 2 H(n-1) - 2 (n-1) / n with H(i) = ln(i) + Euler's constant,
    and the boundary conventions c(n <= 1) = 0, c(2) = 1.
    """
    arr = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        general = 2.0 * (np.log(arr - 1.0) + _EULER_GAMMA) - 2.0 * (arr - 1.0) / arr
    out = np.where(arr <= 1.0, 0.0, np.where(arr == 2.0, 1.0, general))
    return float(out) if np.isscalar(n) else out


@dataclass(frozen=True)
class _Tree:
    # Array layout: internal nodes have leaf_size == -1 and carry a split;
    # leaves carry the subsample count that reached them.
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_size: np.ndarray
    depth: np.ndarray


@dataclass(frozen=True)
class IsolationForestModel:
    trees: tuple[_Tree, ...]
    n_features: int
    subsample_size: int
    max_depth: int


def _build_tree(x: np.ndarray, rng: np.random.Generator, max_depth: int) -> _Tree:
    n_features = x.shape[1]
    feature, threshold, left, right, leaf_size, depth = [], [], [], [], [], []

    def new_node(d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_size.append(-1)
        depth.append(d)
        return len(feature) - 1

    # (node_id, row indices, depth), processed depth first
    stack = [(new_node(0), np.arange(x.shape[0]), 0)]
    while stack:
        node, rows, d = stack.pop()
        n = rows.size
        if n <= 1 or d >= max_depth:
            leaf_size[node] = n
            continue
        sub = x[rows]
        # try one random feature first; fall back to a scan when degenerate
        j = int(rng.integers(n_features))
        lo = sub[:, j].min()
        hi = sub[:, j].max()
        if lo == hi:
            spans = sub.max(axis=0) - sub.min(axis=0)
            candidates = np.flatnonzero(spans > 0)
            if candidates.size == 0:
                leaf_size[node] = n
                continue
            j = int(rng.choice(candidates))
            lo = sub[:, j].min()
            hi = sub[:, j].max()
        thr = lo + (hi - lo) * rng.random()
        if not (lo < thr < hi):
            # adjacent floats leave no interior point; split just above lo,
            # which still sends lo left and hi right
            thr = np.nextafter(lo, hi)
        goes_left = sub[:, j] < thr
        feature[node] = j
        threshold[node] = thr
        left_id = new_node(d + 1)
        right_id = new_node(d + 1)
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, rows[~goes_left], d + 1))
        stack.append((left_id, rows[goes_left], d + 1))
    return _Tree(feature=np.array(feature, dtype=np.int64),
                 threshold=np.array(threshold, dtype=float),
                 left=np.array(left, dtype=np.int64),
                 right=np.array(right, dtype=np.int64),
                 leaf_size=np.array(leaf_size, dtype=np.int64),
                 depth=np.array(depth, dtype=np.int64))


def _rows_of(m) -> np.ndarray:
    values = getattr(m, "values", m)
    x = np.asarray(values, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-d matrix of samples")
    mask = getattr(m, "observed_mask", None)
    if mask is not None and not np.asarray(mask).all():
        raise ValueError("isolation forest requires a fully observed matrix")
    if not np.isfinite(x).all():
        raise ValueError("isolation forest input must not contain missing values")
    return x


def fit(m, cfg: IfConfig = IfConfig()) -> IsolationForestModel:
    """Grow ``cfg.n_trees`` isolation trees on row subsamples of ``m``.

    ``m`` is a fully observed feature matrix or a plain (n, d) array.
    The per-tree subsample size is capped at the number of rows and the
    depth limit is ceil(log2(subsample)).
    """
    x = _rows_of(m)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows")
    subsample = min(cfg.subsample_size, n)
    max_depth = int(np.ceil(np.log2(subsample)))
    root = np.random.SeedSequence(cfg.seed)
    trees = []
    for child in root.spawn(cfg.n_trees):
        rng = np.random.Generator(np.random.PCG64(child))
        rows = rng.choice(n, size=subsample, replace=False)
        trees.append(_build_tree(x[rows], rng, max_depth))
    return IsolationForestModel(trees=tuple(trees), n_features=x.shape[1],
                                subsample_size=subsample, max_depth=max_depth)


def score(model: IsolationForestModel, x) -> float | np.ndarray:
    """Anomaly scores in (0, 1); larger means more isolated."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != model.n_features:
        raise ValueError("feature width does not match the fitted model")
    if not np.isfinite(pts).all():
        raise ValueError("cannot score samples with missing values")
    n = pts.shape[0]
    total = np.zeros(n)
    for tree in model.trees:
        node = np.zeros(n, dtype=np.int64)
        active = tree.leaf_size[node] < 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = pts[idx, tree.feature[cur]] < tree.threshold[cur]
            node[idx] = np.where(go_left, tree.left[cur], tree.right[cur])
            active = tree.leaf_size[node] < 0
        total += tree.depth[node] + average_path_length(tree.leaf_size[node])
    expected = total / len(model.trees)
    scores = np.exp2(-expected / average_path_length(model.subsample_size))
    return float(scores[0]) if single else scores
