"""Feature extraction at three representation levels.

``D1``  windowed attribute history of one entity plus rolling statistics.
``D2``  ``D1`` plus attributes pooled over the entity's hierarchy neighbours.
``D3``  one row per snapshot: the window over every target entity's ``D2``
        vector concatenated in registry order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .graph import DynamicKnowledgeGraph

LEVELS = ("D1", "D2", "D3")
STATS = ("diff", "var", "mean", "sum")
AGGREGATIONS = ("mean", "sum", "max")
ALL_ENTITIES = "*"


@dataclass(frozen=True)
class WindowConfig:
    tau: int = 8
    stats: tuple[str, ...] = STATS
    normalize: bool = True
    agg: str = "mean"

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        bad = set(self.stats) - set(STATS)
        if bad:
            raise ValueError(f"unknown statistics {sorted(bad)}")
        if self.agg not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.agg!r}")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        if len(X) == 0:
            raise ValueError("normalization statistics requested from an empty training set")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns map to 0
        scale = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, np.inf)
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


@dataclass
class FeatureDataset:
    level: str
    X: np.ndarray
    entities: list[str]
    times: np.ndarray
    feature_names: list[str]
    labels: np.ndarray | None = None
    seq_len: int = 1
    step_width: int = 0
    category: str = "Service"
    standardizer: Standardizer | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.X)
        if len(self.entities) != n or len(self.times) != n:
            raise ValueError("row index length must equal row count")
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature names must match row width")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must align with rows")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def width(self) -> int:
        return self.X.shape[1]

    @property
    def row_index(self) -> list[tuple[str | None, int]]:
        return [(None if e == ALL_ENTITIES else e, int(t)) for e, t in zip(self.entities, self.times)]

    def subset(self, rows) -> "FeatureDataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return replace(
            self,
            X=self.X[rows],
            entities=[self.entities[i] for i in rows],
            times=self.times[rows],
            labels=None if self.labels is None else self.labels[rows],
        )

    def sequences(self) -> np.ndarray:
        """Rows as ``n x seq_len x channels``: the window block per step, static columns tiled."""
        return to_sequences(self.X, self.seq_len, self.step_width)


def to_sequences(X: np.ndarray, seq_len: int, step_width: int) -> np.ndarray:
    n = len(X)
    win = X[:, : seq_len * step_width].reshape(n, seq_len, step_width)
    static = X[:, seq_len * step_width:]
    if static.shape[1] == 0:
        return np.ascontiguousarray(win)
    tiled = np.broadcast_to(static[:, None, :], (n, seq_len, static.shape[1]))
    return np.concatenate([win, tiled], axis=2)


# ---------------------------------------------------------------------------
# windows and rolling statistics

def window_concat(series: np.ndarray, tau: int, t: int) -> np.ndarray:
    """``[x(t-tau+1) | ... | x(t)]`` for a ``T x d`` series, 0-based ``t``, zero left-padding."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    T, d = series.shape
    if not 0 <= t < T:
        raise IndexError(f"t={t} outside series of length {T}")
    out = np.zeros((tau, d))
    lo = t - tau + 1
    src = series[max(lo, 0): t + 1]
    out[tau - len(src):] = src
    return out.reshape(-1)


def window_matrix(series: np.ndarray, tau: int) -> np.ndarray:
    """All windows of a ``T x d`` series at once: ``T x (tau*d)``."""
    series = np.asarray(series, dtype=float)
    T, d = series.shape
    padded = np.concatenate([np.zeros((tau - 1, d)), series], axis=0)
    win = sliding_window_view(padded, tau, axis=0)  # T x d x tau
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(T, tau * d)


def stat_features(z: Sequence[float], tau: int, t: int) -> tuple[float, float, float, float]:
    """(difference, variance, rolling mean, rolling sum) of a scalar series at 0-based ``t``.

    Windows truncated by the series start use the available prefix; the
    variance is the population form over the window.
    """
    z = np.asarray(z, dtype=float)
    diff = float(z[t] - z[t - 1]) if t > 0 else 0.0
    w = z[max(0, t - tau + 1): t + 1]
    total = float(w.sum())
    mean = total / len(w)
    var = float(((w - mean) ** 2).sum() / len(w))
    return diff, var, mean, total


def rolling_stats(series: np.ndarray, tau: int) -> dict[str, np.ndarray]:
    """Vectorised :func:`stat_features` for every column and time of a ``T x d`` series."""
    series = np.asarray(series, dtype=float)
    T, d = series.shape
    diff = np.zeros_like(series)
    diff[1:] = series[1:] - series[:-1]
    padded = np.concatenate([np.full((tau - 1, d), np.nan), series], axis=0)
    win = sliding_window_view(padded, tau, axis=0)  # T x d x tau
    count = np.minimum(np.arange(1, T + 1), tau)[:, None].astype(float)
    total = np.nansum(win, axis=2)
    mean = total / count
    var = np.nansum((win - mean[:, :, None]) ** 2, axis=2) / count
    return {"diff": diff, "var": var, "mean": mean, "sum": total}


# ---------------------------------------------------------------------------
# one-hop and two-hop aggregation

def _aggregation_path(graph: DynamicKnowledgeGraph, category: str) -> tuple[str, ...]:
    if category not in graph.schema.categories:
        raise KeyError(f"unknown category {category!r}")
    path = graph.schema.hierarchy_path(category)
    if not path:
        raise KeyError(f"category {category!r} has no hierarchy path to aggregate over")
    return path


def one_hop_names(graph: DynamicKnowledgeGraph, category: str, agg: str = "mean") -> list[str]:
    names = []
    for cat in _aggregation_path(graph, category):
        for a in graph.tensors[cat].attributes:
            names.append(f"hop1|{cat}.{a}.{agg}")
        names.append(f"hop1|{cat}.count")
    return names


def _member_sets(graph: DynamicKnowledgeGraph, category: str, ti: int, path: tuple[str, ...]):
    """For each entity of ``category``: list of neighbour index sets per path level."""
    n = graph.registry.size(category)
    current = [[i] for i in range(n)]
    levels = []
    child = category
    for parent in path:
        adj = graph.hierarchy.adjacency(f"{child}->{parent}", ti)
        nxt = []
        for members in current:
            acc: set[int] = set()
            for m in members:
                acc.update(adj.get(m, ()))
            nxt.append(sorted(acc))
        levels.append(nxt)
        current = nxt
        child = parent
    return levels


def _pool(values: np.ndarray, members: list[list[int]], agg: str) -> np.ndarray:
    """Pool rows of ``values`` (``N x d``) over each member list -> ``len(members) x (d+1)``."""
    d = values.shape[1]
    out = np.zeros((len(members), d + 1))
    counts = np.array([len(m) for m in members], dtype=float)
    out[:, d] = counts
    if counts.sum() == 0 or d == 0:
        return out
    owner = np.repeat(np.arange(len(members)), counts.astype(int))
    flat = np.fromiter((j for m in members for j in m), dtype=np.int64, count=int(counts.sum()))
    vals = values[flat]
    if agg == "max":
        acc = np.full((len(members), d), -np.inf)
        np.maximum.at(acc, owner, vals)
        acc[counts == 0] = 0.0
    else:
        acc = np.zeros((len(members), d))
        np.add.at(acc, owner, vals)
        if agg == "mean":
            nz = counts > 0
            acc[nz] /= counts[nz, None]
    out[:, :d] = acc
    return out


def _one_hop_at(graph: DynamicKnowledgeGraph, category: str, ti: int, agg: str) -> np.ndarray:
    path = _aggregation_path(graph, category)
    levels = _member_sets(graph, category, ti, path)
    blocks = [_pool(graph.tensors[cat].values[:, ti, :], members, agg) for cat, members in zip(path, levels)]
    return np.concatenate(blocks, axis=1)


def one_hop_aggregate(graph: DynamicKnowledgeGraph, category: str, t: int, agg: str = "mean") -> np.ndarray:
    """Nested neighbour pooling for every entity of ``category`` at epoch ``t``.

    For a Service this pools its Connections, the Pods behind those
    Connections, and the Nodes hosting those Pods; each level contributes the
    pooled attributes followed by the neighbour count.  Returns
    ``N_k x width``; empty neighbour sets give zeros.
    """
    if agg not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {agg!r}")
    return _one_hop_at(graph, category, graph.t_index(t), agg)


def one_hop_tensor(graph: DynamicKnowledgeGraph, category: str, agg: str = "mean") -> np.ndarray:
    """:func:`one_hop_aggregate` for every snapshot: ``N_k x T x width``."""
    T = graph.n_timestamps
    first = _one_hop_at(graph, category, 0, agg)
    out = np.zeros((first.shape[0], T, first.shape[1]))
    out[:, 0] = first
    for ti in range(1, T):
        out[:, ti] = _one_hop_at(graph, category, ti, agg)
    return out


def _d1_block(graph: DynamicKnowledgeGraph, category: str, config: WindowConfig):
    tensor = graph.tensors[category]
    names = []
    for lag in range(config.tau - 1, -1, -1):
        names.extend(f"lag{lag}|{a}" for a in tensor.attributes)
    for stat in config.stats:
        names.extend(f"{stat}|{a}" for a in tensor.attributes)
    rows = []
    for i in range(tensor.values.shape[0]):
        series = tensor.values[i]
        parts = [window_matrix(series, config.tau)]
        if config.stats:
            st = rolling_stats(series, config.tau)
            parts.extend(st[s] for s in config.stats)
        rows.append(np.concatenate(parts, axis=1))
    block = np.stack(rows) if rows else np.zeros((0, graph.n_timestamps, len(names)))
    return block, names


def entity_features(graph: DynamicKnowledgeGraph, category: str, level: str, config: WindowConfig):
    """Raw (unnormalised) ``N_k x T x D`` features for ``D1`` or ``D2`` and their names."""
    block, names = _d1_block(graph, category, config)
    if level == "D1":
        return block, names
    if level != "D2":
        raise ValueError(f"entity features exist for D1/D2, not {level}")
    hop = one_hop_tensor(graph, category, config.agg)
    return np.concatenate([block, hop], axis=2), names + one_hop_names(graph, category, config.agg)


def _local_name(iri: str) -> str:
    return iri.rsplit("#", 1)[-1].rsplit("/", 1)[-1]


def two_hop_matrix(graph: DynamicKnowledgeGraph, config: WindowConfig, category: str = "Service"):
    """Per-snapshot concatenation of every ``category`` entity's D2 vector plus presence.

    Returns ``T x N*(w+1)`` and the column names; absent entities contribute
    zero blocks with presence 0.
    """
    n = graph.registry.size(category)
    if n == 0:
        raise ValueError(f"no {category} entities registered")
    feats, names = entity_features(graph, category, "D2", config)
    presence = graph.tensors[category].presence
    feats = np.where(presence[:, :, None], feats, 0.0)
    blocks = np.concatenate([feats, presence[:, :, None].astype(float)], axis=2)  # N x T x (w+1)
    out = blocks.transpose(1, 0, 2).reshape(graph.n_timestamps, -1)
    cols = []
    for iri in graph.registry.entities[category]:
        short = _local_name(iri)
        cols.extend(f"{short}.{nm}" for nm in names)
        cols.append(f"{short}.present")
    return out, cols


def two_hop_concat(graph: DynamicKnowledgeGraph, t: int, config: WindowConfig | None = None,
                   category: str = "Service") -> np.ndarray:
    """``[S_1(t), ..., S_N(t)]``: every service's D2 vector and presence flag at epoch ``t``."""
    config = config or WindowConfig()
    mat, _ = two_hop_matrix(graph, config, category)
    return mat[graph.t_index(t)]


# ---------------------------------------------------------------------------
# datasets

def chronological_cut(times: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean mask of rows whose timestamp falls in the first ``fraction`` of snapshots."""
    uniq = np.unique(times)
    k = int(math.floor(fraction * len(uniq)))
    if k == 0:
        return np.zeros(len(times), dtype=bool)
    return times <= uniq[k - 1]


def build_dataset(
    graph: DynamicKnowledgeGraph,
    level: str,
    config: WindowConfig | None = None,
    events=None,
    category: str = "Service",
    train_fraction: float | None = None,
) -> FeatureDataset:
    """Build the ``level`` representation for ``category`` entities.

    Rows are ordered entity-major then by time for D1/D2, by time for D3.
    When ``config.normalize`` is set, columns are standardised with the
    statistics of the training rows (the first ``train_fraction`` of
    snapshots, or all rows when ``None``).
    """
    config = config or WindowConfig()
    level = level.upper()
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    if config.tau > graph.n_timestamps:
        raise ValueError(f"tau={config.tau} exceeds snapshot count {graph.n_timestamps}")
    T = graph.n_timestamps
    if level == "D3":
        base, base_names = two_hop_matrix(graph, config, category)
        X = window_matrix(base, config.tau)
        names = [f"lag{lag}|{nm}" for lag in range(config.tau - 1, -1, -1) for nm in base_names]
        entities = [ALL_ENTITIES] * T
        times = graph.timestamps.copy()
        seq_len, step = config.tau, base.shape[1]
    else:
        feats, names = entity_features(graph, category, level, config)
        n = feats.shape[0]
        X = feats.reshape(n * T, -1)
        entities = [iri for iri in graph.registry.entities[category] for _ in range(T)]
        times = np.tile(graph.timestamps, n)
        seq_len, step = config.tau, len(graph.tensors[category].attributes)

    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    standardizer = None
    if config.normalize:
        train = np.ones(len(X), dtype=bool) if train_fraction is None else chronological_cut(times, train_fraction)
        standardizer = Standardizer.fit(X[train])
        X = standardizer.transform(X)

    ds = FeatureDataset(
        level=level,
        X=np.ascontiguousarray(X),
        entities=entities,
        times=np.asarray(times, dtype=np.int64),
        feature_names=names,
        seq_len=seq_len,
        step_width=step,
        category=category,
        standardizer=standardizer,
    )
    if events is not None:
        from .labels import expand_labels

        ds.labels = expand_labels(events, ds.row_index)
    return ds


def write_dataset_csv(ds: FeatureDataset, path: str | Path) -> None:
    """CSV with header ``entity,t,<feature names>[,label]``; D3 rows use entity ``*``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["entity", "t", *ds.feature_names]
        if ds.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(len(ds)):
            row = [ds.entities[i], int(ds.times[i]), *map(repr, ds.X[i].tolist())]
            if ds.labels is not None:
                row.append(int(ds.labels[i]))
            w.writerow(row)


def read_dataset_csv(path: str | Path) -> FeatureDataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    if header[:2] != ["entity", "t"]:
        raise ValueError(f"{path}: expected header starting with entity,t")
    has_label = header[-1] == "label"
    names = header[2:-1] if has_label else header[2:]
    entities = [row[0] for row in rows]
    times = np.array([int(row[1]) for row in rows], dtype=np.int64)
    end = -1 if has_label else None
    X = np.array([[float(v) for v in row[2:end]] for row in rows], dtype=float).reshape(len(rows), len(names))
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int8) if has_label else None
    lags = {nm.split("|", 1)[0] for nm in names if nm.startswith("lag")}
    n_window = sum(1 for nm in names if nm.startswith("lag"))
    seq_len = max(len(lags), 1)
    step = n_window // seq_len if lags else 0
    if entities and entities[0] == ALL_ENTITIES:
        level = "D3"
    elif any(nm.startswith("hop1|") for nm in names):
        level = "D2"
    else:
        level = "D1"
    return FeatureDataset(level, X, entities, times, names, labels, seq_len, step)
