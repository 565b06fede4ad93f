"""Interval anomaly labels, event extraction, and train/validation splitting."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

RowKey = tuple  # (entity IRI or None, epoch seconds)


@dataclass(frozen=True, order=True)
class AnomalyEvent:
    entity: str
    t_start: int
    t_end: int
    cls: str = "anomaly"

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError(f"event on {self.entity}: t_start {self.t_start} > t_end {self.t_end}")

    def covers(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end


def expand_labels(events: Iterable[AnomalyEvent], row_index: Sequence[RowKey]) -> np.ndarray:
    """Binary row targets: 1 iff some event on the row's entity covers its time (inclusive).

    Rows with entity ``None`` (per-snapshot rows) are positive when any event
    covers their time.
    """
    events = list(events)
    entities = np.array([e if e is not None else "" for e, _ in row_index], dtype=object)
    times = np.array([t for _, t in row_index], dtype=np.int64)
    out = np.zeros(len(row_index), dtype=np.int8)
    per_entity = entities != ""
    known = set(entities[per_entity].tolist())
    if per_entity.any():
        for ev in events:
            if ev.entity not in known:
                raise KeyError(f"event references unknown entity {ev.entity}")
    by_entity: dict[str, list[AnomalyEvent]] = {}
    for ev in events:
        by_entity.setdefault(ev.entity, []).append(ev)
    for ent, evs in by_entity.items():
        mask = entities == ent
        if not mask.any():
            continue
        t = times[mask]
        hit = np.zeros(len(t), dtype=bool)
        for ev in evs:
            hit |= (t >= ev.t_start) & (t <= ev.t_end)
        out[mask] = hit
    if (~per_entity).any():
        t = times[~per_entity]
        hit = np.zeros(len(t), dtype=bool)
        for ev in events:
            hit |= (t >= ev.t_start) & (t <= ev.t_end)
        out[~per_entity] = hit
    return out


def extract_events(labels: Sequence[int], row_index: Sequence[RowKey], cls: str = "anomaly") -> list[AnomalyEvent]:
    """Maximal runs of consecutive positive rows per entity become one event each.

    Rows must be sorted by (entity, t).
    """
    events = []
    run_start = prev_t = prev_e = None
    for lab, (ent, t) in zip(labels, row_index):
        ent = "" if ent is None else ent
        if ent != prev_e and run_start is not None:
            events.append(AnomalyEvent(prev_e, run_start, prev_t, cls))
            run_start = None
        if lab:
            if run_start is None:
                run_start = t
        elif run_start is not None:
            events.append(AnomalyEvent(ent, run_start, prev_t, cls))
            run_start = None
        prev_t, prev_e = t, ent
    if run_start is not None:
        events.append(AnomalyEvent(prev_e, run_start, prev_t, cls))
    return events


# ---------------------------------------------------------------------------
# splits

TRAIN, VALIDATION = "train", "validation"


@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    validation: np.ndarray
    seed: int

    def to_csv(self, path: str | Path) -> None:
        folds = sorted([(int(i), TRAIN) for i in self.train] + [(int(i), VALIDATION) for i in self.validation])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row_id", "fold"])
            w.writerows(folds)


def _split_normal(rows: np.ndarray, rng: np.random.Generator, fraction: float):
    perm = rng.permutation(rows)
    k = int(math.floor(fraction * len(perm)))
    return perm[:k], perm[k:]


def random_split(n_rows: int, seed: int, fraction: float = 0.8) -> SplitPlan:
    """Plain uniform split, ``floor(fraction * n)`` rows to training."""
    rng = np.random.default_rng(seed)
    train, val = _split_normal(np.arange(n_rows), rng, fraction)
    return SplitPlan(np.sort(train), np.sort(val), seed)


def event_rows(events: Sequence[AnomalyEvent], row_index: Sequence[RowKey]) -> list[np.ndarray]:
    entities = np.array([e if e is not None else "" for e, _ in row_index], dtype=object)
    times = np.array([t for _, t in row_index], dtype=np.int64)
    per_timestamp = entities == ""
    out = []
    for ev in events:
        inside = (times >= ev.t_start) & (times <= ev.t_end)
        out.append(np.flatnonzero(inside & ((entities == ev.entity) | per_timestamp)))
    return out


def event_aware_split(
    row_index: Sequence[RowKey],
    events: Sequence[AnomalyEvent],
    seed: int,
    fraction: float = 0.8,
    required_classes: Iterable[str] = (),
) -> SplitPlan:
    """Split rows keeping every anomalous event whole.

    Normal rows (covered by no event) are split ``fraction`` / rest at random.
    Events that cover none of ``row_index`` are ignored.
    For each anomaly class one event goes to validation and the rest to
    training.  Events sharing rows (possible for per-snapshot rows) are moved
    together as one unit.
    """
    rng = np.random.default_rng(seed)
    n = len(row_index)
    events = sorted(events)
    # events outside these rows (e.g. in a held-out period) take no part in the split
    members = event_rows(events, row_index)
    keep = [i for i, rows in enumerate(members) if len(rows)]
    events = [events[i] for i in keep]
    members = [members[i] for i in keep]
    classes = sorted({ev.cls for ev in events})
    for cls in required_classes:
        if cls not in classes:
            raise ValueError(f"anomaly class {cls!r} has no events")

    # union events that share rows
    parent = list(range(len(events)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = np.full(n, -1)
    for i, rows in enumerate(members):
        for r in rows:
            if owner[r] >= 0:
                a, b = find(owner[r]), find(i)
                if a != b:
                    parent[a] = b
            else:
                owner[r] = i
    units: dict[int, list[int]] = {}
    for i in range(len(events)):
        units.setdefault(find(i), []).append(i)

    to_validation: set[int] = set()
    for cls in classes:
        cands = sorted({find(i) for i, ev in enumerate(events) if ev.cls == cls})
        n_events = sum(1 for ev in events if ev.cls == cls)
        if n_events == 1:
            warnings.warn(f"anomaly class {cls!r} has a single event; none left for training", stacklevel=2)
        if any(u in to_validation for u in cands):
            continue
        to_validation.add(cands[int(rng.integers(len(cands)))])

    anomalous = np.zeros(n, dtype=bool)
    val_mask = np.zeros(n, dtype=bool)
    for u, idx in units.items():
        rows = np.unique(np.concatenate([members[i] for i in idx])) if idx else np.array([], dtype=int)
        anomalous[rows] = True
        if u in to_validation:
            val_mask[rows] = True

    normal = np.flatnonzero(~anomalous)
    n_train, n_val = _split_normal(normal, rng, fraction)
    val_mask[n_val] = True
    train = np.flatnonzero(~val_mask)
    return SplitPlan(train, np.flatnonzero(val_mask), seed)


# ---------------------------------------------------------------------------
# labels file: entity,t_start,t_end,class

LABEL_HEADER = ["entity", "t_start", "t_end", "class"]


def write_labels_csv(events: Iterable[AnomalyEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_HEADER)
        for ev in events:
            w.writerow([ev.entity, ev.t_start, ev.t_end, ev.cls])


def read_labels_csv(path: str | Path) -> list[AnomalyEvent]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != LABEL_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LABEL_HEADER)}")
        return [AnomalyEvent(e, int(a), int(b), c) for e, a, b, c in r]
