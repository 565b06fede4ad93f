"""Shared training configuration, class weighting and checkpoint format.

Checkpoints are ``.npz`` archives.  Every archive holds a ``__meta__`` entry:
a UTF-8 JSON document with ``format`` (:data:`CHECKPOINT_FORMAT`),
``version``, ``kind`` (model class key) and model-specific scalars.  All
remaining entries are the model's parameter arrays by name.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "dkgad-model"
CHECKPOINT_VERSION = 1


class WidthMismatch(ValueError):
    pass


class SingleClassError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    rounds: int = 100
    learning_rate: float = 0.1
    regularization: float = 1e-3
    class_weights: tuple[float, float] | None = None
    threshold: float = 0.5
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")


def balanced_class_weights(y) -> tuple[float, float]:
    """Inverse class frequency, scaled so the mean weight over samples is 1."""
    y = np.asarray(y).astype(bool)
    n, n_pos = len(y), int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("both classes must be present")
    return n / (2.0 * n_neg), n / (2.0 * n_pos)


def sample_weights(y, class_weights: tuple[float, float] | None) -> np.ndarray:
    y = np.asarray(y).astype(bool)
    w_neg, w_pos = class_weights if class_weights is not None else balanced_class_weights(y)
    return np.where(y, w_pos, w_neg).astype(float)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def check_width(X, width: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != width:
        raise WidthMismatch(f"model expects width {width}, got {X.shape[-1]}")
    return X


def check_binary(y) -> np.ndarray:
    y = np.asarray(y).astype(np.int8)
    if y.min(initial=0) == y.max(initial=0) or len(np.unique(y)) < 2:
        raise SingleClassError("training labels contain a single class")
    return y


# ---------------------------------------------------------------------------
# checkpoints

_REGISTRY: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls
    return deco


def save_model(model, path: str | Path) -> None:
    meta, arrays = model.to_state()
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": model.kind, **meta}
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, __meta__=blob, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    try:
        cls = _REGISTRY[meta["kind"]]
    except KeyError:
        raise ValueError(f"{path}: unknown model kind {meta['kind']!r}") from None
    return cls.from_state(meta, arrays)


def predict_proba(model, rows) -> np.ndarray:
    """Anomaly probability per row, in [0, 1]."""
    return model.predict_proba(rows)


def predict_labels(model, rows) -> np.ndarray:
    return (predict_proba(model, rows) >= model.threshold).astype(np.int8)
