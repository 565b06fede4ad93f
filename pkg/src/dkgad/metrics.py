"""Binary anomaly metrics and the all-anomalous baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    positives_rate: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "MetricsReport":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        n = tp + fp + fn + tn
        return cls(tp, fp, fn, tn, p, r, f1_score(p, r), (tp + fn) / n if n else 0.0)

    def to_kv(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def to_text(self, title: str = "metrics") -> str:
        return (
            f"{title}\n"
            f"  F1         {self.f1:.5f}\n"
            f"  precision  {self.precision:.5f}\n"
            f"  recall     {self.recall:.5f}\n"
            f"  tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}  positives rate {self.positives_rate:.5f}\n"
        )


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def compute_metrics(predicted, actual) -> MetricsReport:
    predicted = np.asarray(predicted).astype(bool)
    actual = np.asarray(actual).astype(bool)
    if predicted.shape != actual.shape:
        raise LengthMismatch(f"predicted has {predicted.size} rows but actual has {actual.size}")
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    return MetricsReport.from_counts(tp, fp, fn, tn)


def baseline_all_anomalous(actual) -> MetricsReport:
    """Metrics of flagging every row: recall 1, precision = anomaly rate."""
    actual = np.asarray(actual)
    if actual.size == 0:
        raise ValueError("baseline needs at least one row")
    return compute_metrics(np.ones(actual.shape, dtype=bool), actual)
