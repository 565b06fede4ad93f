"""Gradient-boosted decision stumps with second-order (Newton) leaf values."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import TrainConfig, check_binary, check_width, register, sample_weights, sigmoid


@register("boosted_stumps")
@dataclass
class BoostedStumpsModel:
    feature: np.ndarray    # -1 for a constant stump
    split: np.ndarray      # go left when x <= split
    left_value: np.ndarray
    right_value: np.ndarray
    learning_rate: float
    width: int
    gain: np.ndarray = field(default_factory=lambda: np.zeros(0))
    threshold: float = 0.5

    @property
    def rounds(self) -> int:
        return len(self.feature)

    def stump_outputs(self, X) -> np.ndarray:
        """``rounds x n`` unscaled stump outputs."""
        X = check_width(X, self.width)
        out = np.empty((self.rounds, len(X)))
        for r in range(self.rounds):
            f = self.feature[r]
            if f < 0:
                out[r] = self.left_value[r]
            else:
                out[r] = np.where(X[:, f] <= self.split[r], self.left_value[r], self.right_value[r])
        return out

    def decision_function(self, X) -> np.ndarray:
        return self.learning_rate * self.stump_outputs(X).sum(axis=0)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    @property
    def feature_importance(self) -> np.ndarray:
        imp = np.zeros(self.width)
        used = self.feature >= 0
        np.add.at(imp, self.feature[used], self.gain[used])
        total = imp.sum()
        return imp / total if total > 0 else imp

    def to_state(self):
        meta = {"learning_rate": self.learning_rate, "width": self.width, "threshold": self.threshold}
        arrays = dict(feature=self.feature, split=self.split, left_value=self.left_value,
                      right_value=self.right_value, gain=self.gain)
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["feature"], arrays["split"], arrays["left_value"], arrays["right_value"],
                   meta["learning_rate"], meta["width"], arrays["gain"], meta["threshold"])


def train_boosted_stumps(rows, labels, config: TrainConfig | None = None, reg_lambda: float = 1.0,
                         min_child_weight: float = 1e-3) -> BoostedStumpsModel:
    """Each round fits the depth-1 tree with the best second-order split gain.

    Gradients and hessians of the logistic loss are multiplied by the class
    weights; leaf values are ``-G / (H + lambda)``.
    """
    config = config or TrainConfig(learning_rate=0.3)
    X = np.asarray(rows, dtype=float)
    y = check_binary(labels).astype(float)
    c = sample_weights(y, config.class_weights)
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    # a split after sorted position i needs a strictly larger next value
    valid = Xs[1:] > Xs[:-1]
    mids = 0.5 * (Xs[1:] + Xs[:-1])

    score = np.zeros(n)
    feats, splits, lefts, rights, gains = [], [], [], [], []
    for _ in range(config.rounds):
        p = sigmoid(score)
        g = c * (p - y)
        h = c * p * (1.0 - p)
        Gt, Ht = g.sum(), h.sum()
        parent = Gt * Gt / (Ht + reg_lambda)
        best = None
        if n > 1 and valid.any():
            GL = np.cumsum(g[order], axis=0)[:-1]
            HL = np.cumsum(h[order], axis=0)[:-1]
            GR, HR = Gt - GL, Ht - HL
            gain = GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent
            ok = valid & (HL >= min_child_weight) & (HR >= min_child_weight)
            gain = np.where(ok, gain, -np.inf)
            flat = int(np.argmax(gain))
            i, f = divmod(flat, d)
            if np.isfinite(gain[i, f]) and gain[i, f] > 0:
                best = (f, mids[i, f], -GL[i, f] / (HL[i, f] + reg_lambda),
                        -GR[i, f] / (HR[i, f] + reg_lambda), gain[i, f])
        if best is None:
            const = -Gt / (Ht + reg_lambda)
            best = (-1, 0.0, const, const, 0.0)
        f, thr, lv, rv, gn = best
        feats.append(f)
        splits.append(thr)
        lefts.append(lv)
        rights.append(rv)
        gains.append(gn)
        out = np.full(n, lv) if f < 0 else np.where(X[:, f] <= thr, lv, rv)
        score += config.learning_rate * out
    return BoostedStumpsModel(
        np.array(feats, dtype=np.int64), np.array(splits, dtype=float), np.array(lefts, dtype=float),
        np.array(rights, dtype=float), config.learning_rate, d, np.array(gains, dtype=float), config.threshold,
    )
