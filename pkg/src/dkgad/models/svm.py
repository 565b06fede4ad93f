"""Class-weighted linear SVM trained by stochastic subgradient descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .base import TrainConfig, check_binary, check_width, register, sample_weights, sigmoid

log = logging.getLogger(__name__)


@register("linear_svm")
@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    calibration: tuple[float, float] = (1.0, 0.0)
    threshold: float = 0.5
    objective: list[float] = field(default_factory=list)

    @property
    def width(self) -> int:
        return len(self.weights)

    def margin(self, X) -> np.ndarray:
        X = check_width(X, self.width)
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        a, b = self.calibration
        return sigmoid(a * self.margin(X) + b)

    def to_state(self):
        meta = {"bias": self.bias, "calibration": list(self.calibration), "threshold": self.threshold,
                "objective": self.objective}
        return meta, {"weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["weights"], meta["bias"], tuple(meta["calibration"]), meta["threshold"], meta["objective"])


def svm_objective(w, b, X, s, c, lam) -> float:
    """``lam*|w|^2 + mean(c * max(0, 1 - s*(Xw+b)))`` with ``s`` in {-1, +1}."""
    hinge = np.maximum(0.0, 1.0 - s * (X @ w + b))
    return float(lam * w @ w + np.mean(c * hinge))


def svm_subgradient(w, b, X, s, c, lam) -> tuple[np.ndarray, float]:
    """A subgradient of :func:`svm_objective` (zero hinge term where the margin exceeds 1)."""
    active = s * (X @ w + b) < 1.0
    coef = np.where(active, c * s, 0.0) / len(X)
    return 2.0 * lam * w - X.T @ coef, -float(coef.sum())


def fit_platt(margins, y, weights, iters: int = 50) -> tuple[float, float]:
    """Weighted logistic fit of ``sigmoid(a*m + b)`` to labels by Newton steps."""
    m = np.asarray(margins, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = 1.0, 0.0
    ridge = 1e-6
    for _ in range(iters):
        p = sigmoid(a * m + b)
        r = weights * (p - y)
        g = np.array([r @ m, r.sum()])
        h = weights * p * (1 - p)
        H = np.array([[h @ (m * m) + ridge, h @ m], [h @ m, h.sum() + ridge]])
        step = np.linalg.solve(H, g)
        a, b = a - step[0], b - step[1]
        if np.abs(step).max() < 1e-10:
            break
    return float(a), float(b)


def train_linear_svm(rows, labels, config: TrainConfig | None = None) -> LinearSvmModel:
    """Minimise class-weighted hinge loss + L2 by mini-batch subgradient steps.

    The step size decays as ``lr / (1 + epoch)``.  An epoch whose pass raises
    the full-data objective is rolled back and the step halved, so the
    recorded objective never increases.  Margins are then mapped to
    probabilities by a class-weighted logistic fit.
    """
    config = config or TrainConfig()
    X = np.asarray(rows, dtype=float)
    y = check_binary(labels)
    s = np.where(y == 1, 1.0, -1.0)
    c = sample_weights(y, config.class_weights)
    lam = config.regularization
    rng = np.random.default_rng(config.seed)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    obj = svm_objective(w, b, X, s, c, lam)
    history = [obj]
    scale = 1.0
    bs = max(1, min(config.batch_size, n))
    for epoch in range(config.epochs):
        eta = scale * config.learning_rate / (1.0 + epoch)
        w_new, b_new = w.copy(), b
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            gw, gb = svm_subgradient(w_new, b_new, X[idx], s[idx], c[idx], lam)
            w_new -= eta * gw
            b_new -= eta * gb
        new_obj = svm_objective(w_new, b_new, X, s, c, lam)
        if new_obj <= obj:
            w, b, obj = w_new, b_new, new_obj
        else:
            scale *= 0.5
        history.append(obj)
    a, cb = fit_platt(X @ w + b, y, c)
    return LinearSvmModel(w, float(b), (a, cb), config.threshold, history)
