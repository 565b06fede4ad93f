"""Soft and hard voting over member anomaly scores."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SOFT, HARD = "soft", "hard"
UNANIMOUS, MAJORITY = "unanimous", "majority"


@dataclass
class EnsembleConfig:
    members: list[str]
    mode: str = SOFT
    mechanism: str | None = None
    threshold: float = 0.5
    member_thresholds: list[float] | None = None

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        if self.mode not in (SOFT, HARD):
            raise ValueError(f"unknown voting mode {self.mode!r}")
        if (self.mechanism is not None) != (self.mode == HARD):
            raise ValueError("a mechanism is required for hard voting and only for hard voting")
        if self.mechanism not in (None, UNANIMOUS, MAJORITY):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def thresholds(self) -> list[float]:
        return self.member_thresholds or [self.threshold] * len(self.members)


def _matrix(rows) -> np.ndarray:
    try:
        m = np.asarray(rows, dtype=float)
    except ValueError:
        raise ValueError("member score rows are misaligned") from None
    if m.ndim != 2:
        raise ValueError("member score rows are misaligned")
    return m


def vote_soft(scores, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Average member probabilities; anomaly iff the average reaches ``threshold``."""
    s = _matrix(scores)
    if np.any((s < 0) | (s > 1)):
        raise ValueError("member scores must lie in [0, 1]")
    # offsets from the first member keep identical members bit-exact
    avg = s[0] + (s - s[0]).mean(axis=0)
    return (avg >= threshold).astype(np.int8), avg


def vote_hard(labels, mechanism: str) -> np.ndarray:
    """Combine binary member votes; a majority needs strictly more than half."""
    v = _matrix(labels)
    if not np.all((v == 0) | (v == 1)):
        raise ValueError("hard voting needs binary member labels")
    if mechanism == UNANIMOUS:
        return np.all(v == 1, axis=0).astype(np.int8)
    if mechanism == MAJORITY:
        return (2 * v.sum(axis=0) > v.shape[0]).astype(np.int8)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def combine(config: EnsembleConfig, scores) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``config`` to a members x rows score matrix -> (labels, ensemble scores)."""
    s = _matrix(scores)
    if s.shape[0] != len(config.members):
        raise ValueError(f"expected {len(config.members)} member rows, got {s.shape[0]}")
    if config.mode == SOFT:
        return vote_soft(s, config.threshold)
    votes = (s >= np.asarray(config.thresholds())[:, None]).astype(np.int8)
    labels = vote_hard(votes, config.mechanism)
    return labels, votes.mean(axis=0)


def align_to_rows(
    keys: Sequence[tuple[str | None, int]],
    scores: Sequence[float],
    target: Sequence[tuple[str | None, int]],
) -> np.ndarray:
    """Map member scores onto target (entity, t) rows.

    Per-snapshot scores (entity ``None``) are broadcast to every entity at
    that time.
    """
    by_key = {}
    by_time = {}
    for (ent, t), s in zip(keys, scores):
        if ent is None:
            by_time[int(t)] = s
        else:
            by_key[(ent, int(t))] = s
    out = np.empty(len(target))
    for i, (ent, t) in enumerate(target):
        t = int(t)
        if (ent, t) in by_key:
            out[i] = by_key[(ent, t)]
        elif t in by_time:
            out[i] = by_time[t]
        else:
            raise KeyError(f"member has no score for row ({ent}, {t})")
    return out


# manifest: {"mode": ..., "mechanism": ..., "threshold": ...,
#            "members": [{"name", "checkpoint", "dataset", "threshold"?}, ...]}
# a member without a threshold votes with its checkpoint's own threshold

@dataclass
class EnsembleManifest:
    config: EnsembleConfig
    checkpoints: list[str]
    datasets: list[str]
    base_dir: Path = field(default_factory=Path)
    explicit_thresholds: list[float | None] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        members = doc["members"]
        config = EnsembleConfig(
            members=[m.get("name", m["checkpoint"]) for m in members],
            mode=doc.get("mode", SOFT),
            mechanism=doc.get("mechanism"),
            threshold=doc.get("threshold", 0.5),
        )
        explicit = [m.get("threshold") for m in members]
        return cls(config, [m["checkpoint"] for m in members], [m["dataset"] for m in members], path.parent,
                   explicit)

    def member_thresholds(self, fallback: Sequence[float]) -> list[float]:
        """Manifest thresholds where given, else the matching ``fallback`` entry."""
        return [float(f if e is None else e) for e, f in zip(self.explicit_thresholds, fallback)]

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def dump(self) -> str:
        thresholds = self.explicit_thresholds or [None] * len(self.checkpoints)
        members = []
        for n, c, d, th in zip(self.config.members, self.checkpoints, self.datasets, thresholds):
            m = {"name": n, "checkpoint": c, "dataset": d}
            if th is not None:
                m["threshold"] = th
            members.append(m)
        doc = {
            "mode": self.config.mode,
            "mechanism": self.config.mechanism,
            "threshold": self.config.threshold,
            "members": members,
        }
        return json.dumps(doc, indent=2)


# prediction export: entity,t,score,label (entity "*" for per-snapshot rows)

def write_predictions(path: str | Path, row_index, scores, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "t", "score", "label"])
        for (ent, t), s, lab in zip(row_index, scores, labels):
            w.writerow([ent if ent is not None else "*", int(t), f"{float(s):.6f}", int(lab)])


def read_predictions(path: str | Path) -> tuple[list[tuple[str | None, int]], np.ndarray, np.ndarray]:
    keys, scores, labels = [], [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["entity", "t", "score", "label"]:
            raise ValueError(f"{path}: not a prediction file (header {header})")
        for row in r:
            keys.append((None if row[0] == "*" else row[0], int(row[1])))
            scores.append(float(row[2]))
            labels.append(int(row[3]))
    return keys, np.array(scores), np.array(labels, dtype=np.int8)
