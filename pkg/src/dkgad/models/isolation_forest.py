"""Isolation forest built and scored with flat per-tree node arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import check_width, register

EULER_GAMMA = 0.5772156649015329


def average_path_length(n) -> np.ndarray:
    """Expected unsuccessful-search path length in a BST of ``n`` points; c(1)=0, c(2)=1."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    out[n == 2] = 1.0
    big = n > 2
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out


def isolation_score(mean_path, psi: int) -> np.ndarray:
    """``2 ** (-E[h] / c(psi))``; a zero normaliser (psi=1) scores 0.5."""
    c = float(average_path_length(psi))
    mean_path = np.asarray(mean_path, dtype=float)
    if c == 0.0:
        return np.full(mean_path.shape, 0.5)
    return np.power(2.0, -mean_path / c)


@register("isolation_forest")
@dataclass
class IsolationForestModel:
    feature: np.ndarray     # n_trees x max_nodes, -1 marks a leaf
    split: np.ndarray       # split value, go left when x < split
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray        # training points reaching each leaf
    psi: int
    width: int
    threshold: float = 0.5

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    @property
    def height_limit(self) -> int:
        return max(int(math.ceil(math.log2(self.psi))), 0)

    def path_lengths(self, X) -> np.ndarray:
        """``n_trees x n`` path lengths, each including the c(leaf size) adjustment."""
        X = check_width(X, self.width)
        n = len(X)
        rows = np.arange(n)
        out = np.empty((self.n_trees, n))
        for k in range(self.n_trees):
            feat, split, left, right = self.feature[k], self.split[k], self.left[k], self.right[k]
            node = np.zeros(n, dtype=np.int64)
            depth = np.zeros(n)
            for _ in range(self.height_limit + 1):
                f = feat[node]
                active = f >= 0
                if not active.any():
                    break
                go_left = X[rows, np.where(active, f, 0)] < split[node]
                node = np.where(active, np.where(go_left, left[node], right[node]), node)
                depth += active
            out[k] = depth + average_path_length(self.size[k][node])
        return out

    def predict_proba(self, X) -> np.ndarray:
        return isolation_score(self.path_lengths(X).mean(axis=0), self.psi)

    def to_state(self):
        meta = {"psi": self.psi, "width": self.width, "threshold": self.threshold}
        arrays = dict(feature=self.feature, split=self.split, left=self.left, right=self.right, size=self.size)
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(**arrays, psi=meta["psi"], width=meta["width"], threshold=meta["threshold"])


def _build_tree(S: np.ndarray, limit: int, rng: np.random.Generator, capacity: int):
    feature = np.full(capacity, -1, dtype=np.int64)
    split = np.zeros(capacity)
    left = np.zeros(capacity, dtype=np.int64)
    right = np.zeros(capacity, dtype=np.int64)
    size = np.zeros(capacity, dtype=np.int64)
    n_nodes = 1
    stack = [(0, np.arange(len(S)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        size[node] = len(idx)
        if depth >= limit or len(idx) <= 1:
            continue
        sub = S[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            continue
        f = int(splittable[rng.integers(len(splittable))])
        value = float(rng.uniform(lo[f], hi[f]))
        mask = sub[:, f] < value
        feature[node], split[node] = f, value
        left[node], right[node] = n_nodes, n_nodes + 1
        n_nodes += 2
        stack.append((int(right[node]), idx[~mask], depth + 1))
        stack.append((int(left[node]), idx[mask], depth + 1))
    return feature, split, left, right, size


def train_isolation_forest(rows, n_trees: int = 100, psi: int = 256, seed: int = 0,
                           threshold: float = 0.5) -> IsolationForestModel:
    """Fit an isolation forest; labels are never consulted."""
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("isolation forest needs a non-empty 2-D row matrix")
    if psi < 1:
        raise ValueError("subsample size psi must be >= 1")
    if psi > len(X):
        raise ValueError(f"psi={psi} exceeds row count {len(X)}")
    rng = np.random.default_rng(seed)
    limit = max(int(math.ceil(math.log2(psi))), 0)
    capacity = 2 ** (limit + 1) - 1
    trees = []
    for _ in range(n_trees):
        sample = X[rng.choice(len(X), size=psi, replace=False)]
        trees.append(_build_tree(sample, limit, rng, capacity))
    stacked = [np.stack(parts) for parts in zip(*trees)]
    return IsolationForestModel(*stacked, psi=psi, width=X.shape[1], threshold=threshold)


def score_isolation_forest(model: IsolationForestModel, rows) -> np.ndarray:
    return model.predict_proba(rows)
