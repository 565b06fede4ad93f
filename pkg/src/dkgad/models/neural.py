"""Small neural scorers with hand-written backpropagation.

All three networks end in a single logit and are trained on class-weighted
binary cross-entropy.  ``backward`` returns gradients of the *summed* batch
loss, so a duplicated sample contributes exactly twice; :func:`train`
divides by the batch size before the update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..metrics import compute_metrics
from .base import check_binary, register, sample_weights, sigmoid

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")


class DivergenceError(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def weighted_bce(logits, y, class_weights) -> float:
    """Sum over samples of ``c_i * BCE(sigmoid(z_i), y_i)``."""
    c = _weights(y, class_weights)
    z = np.asarray(logits, dtype=float)
    softplus = np.logaddexp(0.0, z)
    return float(np.sum(c * (softplus - y * z)))


def _weights(y, class_weights):
    w_neg, w_pos = class_weights
    return np.where(np.asarray(y) > 0.5, w_pos, w_neg).astype(float)


class _Net:
    """Parameter container shared by the three architectures."""

    kind = "net"
    sequential = False
    params: dict
    threshold: float = 0.5

    def forward(self, X):
        raise NotImplementedError

    def backward(self, cache, y, class_weights):
        raise NotImplementedError

    def check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        expected = self.input_shape
        if X.shape[1:] != expected:
            raise ShapeMismatch(f"{self.kind} expects input shape (n, {', '.join(map(str, expected))}), got {X.shape}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        out = []
        X = self.check_input(X)
        for lo in range(0, len(X), 1024):
            p, _ = self.forward(X[lo:lo + 1024])
            out.append(p)
        return np.concatenate(out) if out else np.zeros(0)

    def loss(self, X, y, class_weights=(1.0, 1.0)) -> float:
        _, cache = self.forward(X)
        return weighted_bce(cache["logit"], y, class_weights)

    def _dlogit(self, cache, y, class_weights):
        return _weights(y, class_weights) * (sigmoid(cache["logit"]) - y)

    def to_state(self):
        return {"arch": self.arch(), "threshold": self.threshold}, dict(self.params)

    @classmethod
    def from_state(cls, meta, arrays):
        model = cls(**meta["arch"])
        model.params = {k: np.array(v, dtype=float) for k, v in arrays.items()}
        model.threshold = meta["threshold"]
        return model


# ---------------------------------------------------------------------------
# MLP

@register("mlp")
class DenseNet(_Net):
    def __init__(self, width: int, hidden=(32, 16), activation: str = "relu", seed: int = 0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.width = int(width)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        dims = (self.width, *self.hidden)
        self.params = {}
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"W{i}"] = _glorot(rng, a, b)
            self.params[f"b{i}"] = np.zeros(b)
        self.params["W_out"] = _glorot(rng, dims[-1], 1)[:, 0]
        self.params["b_out"] = np.zeros(())

    @property
    def input_shape(self):
        return (self.width,)

    def arch(self):
        return {"width": self.width, "hidden": list(self.hidden), "activation": self.activation, "seed": self.seed}

    def forward(self, X):
        X = self.check_input(X)
        P = self.params
        acts, pre = [X], []
        a = X
        for i in range(len(self.hidden)):
            z = a @ P[f"W{i}"] + P[f"b{i}"]
            a = _act(z, self.activation)
            pre.append(z)
            acts.append(a)
        logit = a @ P["W_out"] + P["b_out"]
        return sigmoid(logit), {"acts": acts, "pre": pre, "logit": logit}

    def backward(self, cache, y, class_weights):
        P = self.params
        dz = self._dlogit(cache, y, class_weights)
        acts, pre = cache["acts"], cache["pre"]
        grads = {"W_out": acts[-1].T @ dz, "b_out": np.asarray(dz.sum())}
        da = np.outer(dz, P["W_out"])
        for i in range(len(self.hidden) - 1, -1, -1):
            dzi = da * _act_grad(pre[i], acts[i + 1], self.activation)
            grads[f"W{i}"] = acts[i].T @ dzi
            grads[f"b{i}"] = dzi.sum(axis=0)
            da = dzi @ P[f"W{i}"].T
        return grads


# ---------------------------------------------------------------------------
# causal temporal convolution

def causal_conv(X, W, b, dilation: int):
    """``y[t] = b + sum_j x[t - (k-1-j)*dilation] @ W[j]`` with zero history."""
    B, T, _ = X.shape
    k = W.shape[0]
    pad = (k - 1) * dilation
    Xp = np.concatenate([np.zeros((B, pad, X.shape[2])), X], axis=1)
    Y = np.broadcast_to(b, (B, T, W.shape[2])).copy()
    for j in range(k):
        Y += Xp[:, j * dilation: j * dilation + T] @ W[j]
    return Y, Xp


def causal_conv_backward(dY, Xp, W, dilation: int):
    B, T, cout = dY.shape
    k, cin, _ = W.shape
    pad = (k - 1) * dilation
    dXp = np.zeros_like(Xp)
    dW = np.empty_like(W)
    flat_dY = dY.reshape(-1, cout)
    for j in range(k):
        sl = slice(j * dilation, j * dilation + T)
        dW[j] = Xp[:, sl].reshape(-1, cin).T @ flat_dY
        dXp[:, sl] += dY @ W[j].T
    return dXp[:, pad:], dW, dY.sum(axis=(0, 1))


@register("tcn")
class CausalConvNet(_Net):
    sequential = True

    def __init__(self, seq_len: int, channels: int, hidden: int = 16, kernel: int = 3,
                 dilations=(1, 2, 4), activation: str = "relu", seed: int = 0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.seq_len, self.channels = int(seq_len), int(channels)
        self.hidden, self.kernel = int(hidden), int(kernel)
        self.dilations = tuple(int(d) for d in dilations)
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = {}
        cin = self.channels
        for i, _ in enumerate(self.dilations):
            self.params[f"conv{i}.W"] = _glorot(rng, cin * kernel, hidden, (kernel, cin, hidden))
            self.params[f"conv{i}.b"] = np.zeros(hidden)
            cin = hidden
        self.params["W_out"] = _glorot(rng, hidden, 1)[:, 0]
        self.params["b_out"] = np.zeros(())

    @property
    def input_shape(self):
        return (self.seq_len, self.channels)

    def arch(self):
        return {"seq_len": self.seq_len, "channels": self.channels, "hidden": self.hidden, "kernel": self.kernel,
                "dilations": list(self.dilations), "activation": self.activation, "seed": self.seed}

    def _features(self, X):
        P = self.params
        h = X
        layers = []
        for i, d in enumerate(self.dilations):
            z, Xp = causal_conv(h, P[f"conv{i}.W"], P[f"conv{i}.b"], d)
            a = _act(z, self.activation)
            layers.append((Xp, z, a))
            h = a
        return h, layers

    def features(self, X) -> np.ndarray:
        """Per-time output of the last convolution, ``n x seq_len x hidden``."""
        return self._features(self.check_input(X))[0]

    def forward(self, X):
        X = self.check_input(X)
        h, layers = self._features(X)
        last = h[:, -1, :]
        logit = last @ self.params["W_out"] + self.params["b_out"]
        return sigmoid(logit), {"layers": layers, "last": last, "logit": logit}

    def backward(self, cache, y, class_weights):
        P = self.params
        dz = self._dlogit(cache, y, class_weights)
        grads = {"W_out": cache["last"].T @ dz, "b_out": np.asarray(dz.sum())}
        layers = cache["layers"]
        dh = np.zeros_like(layers[-1][2])
        dh[:, -1, :] = np.outer(dz, P["W_out"])
        for i in range(len(self.dilations) - 1, -1, -1):
            Xp, z, a = layers[i]
            dzi = dh * _act_grad(z, a, self.activation)
            dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = causal_conv_backward(
                dzi, Xp, P[f"conv{i}.W"], self.dilations[i])
        return grads


# ---------------------------------------------------------------------------
# stacked self-attention

def positional_encoding(seq_len: int, dim: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def softmax(S, axis=-1):
    e = np.exp(S - S.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@register("self_attention")
class SelfAttentionNet(_Net):
    """Single-head attention blocks: ``h + softmax(QK^T/sqrt(d)) V Wo`` then a residual feedforward."""

    sequential = True

    def __init__(self, seq_len: int, channels: int, d_model: int = 32, d_ff: int = 64, n_stacks: int = 2,
                 activation: str = "relu", seed: int = 0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.seq_len, self.channels = int(seq_len), int(channels)
        self.d_model, self.d_ff, self.n_stacks = int(d_model), int(d_ff), int(n_stacks)
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        dm = self.d_model
        P = {"W_in": _glorot(rng, self.channels, dm), "b_in": np.zeros(dm)}
        for s in range(self.n_stacks):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                P[f"s{s}.{name}"] = _glorot(rng, dm, dm)
            P[f"s{s}.W1"] = _glorot(rng, dm, self.d_ff)
            P[f"s{s}.b1"] = np.zeros(self.d_ff)
            P[f"s{s}.W2"] = _glorot(rng, self.d_ff, dm)
            P[f"s{s}.b2"] = np.zeros(dm)
        P["W_out"] = _glorot(rng, dm, 1)[:, 0]
        P["b_out"] = np.zeros(())
        self.params = P
        self._pe = positional_encoding(self.seq_len, dm)

    @property
    def input_shape(self):
        return (self.seq_len, self.channels)

    def arch(self):
        return {"seq_len": self.seq_len, "channels": self.channels, "d_model": self.d_model, "d_ff": self.d_ff,
                "n_stacks": self.n_stacks, "activation": self.activation, "seed": self.seed}

    def forward(self, X):
        X = self.check_input(X)
        P = self.params
        scale = 1.0 / math.sqrt(self.d_model)
        h = X @ P["W_in"] + P["b_in"] + self._pe
        blocks = []
        for s in range(self.n_stacks):
            Q, K, V = h @ P[f"s{s}.Wq"], h @ P[f"s{s}.Wk"], h @ P[f"s{s}.Wv"]
            A = softmax(Q @ K.transpose(0, 2, 1) * scale)
            O = A @ V
            h1 = h + O @ P[f"s{s}.Wo"]
            z = h1 @ P[f"s{s}.W1"] + P[f"s{s}.b1"]
            a = _act(z, self.activation)
            h2 = h1 + a @ P[f"s{s}.W2"] + P[f"s{s}.b2"]
            blocks.append({"h": h, "Q": Q, "K": K, "V": V, "A": A, "O": O, "h1": h1, "z": z, "a": a})
            h = h2
        pooled = h.mean(axis=1)
        logit = pooled @ P["W_out"] + P["b_out"]
        return sigmoid(logit), {"X": X, "blocks": blocks, "pooled": pooled, "logit": logit}

    def attention(self, X) -> list[np.ndarray]:
        """Attention matrices (``n x T x T``) of every stack."""
        _, cache = self.forward(X)
        return [b["A"] for b in cache["blocks"]]

    def backward(self, cache, y, class_weights):
        P = self.params
        scale = 1.0 / math.sqrt(self.d_model)
        dz = self._dlogit(cache, y, class_weights)
        grads = {"W_out": cache["pooled"].T @ dz, "b_out": np.asarray(dz.sum())}
        T = self.seq_len
        dh = np.repeat(np.outer(dz, P["W_out"])[:, None, :] / T, T, axis=1)
        for s in range(self.n_stacks - 1, -1, -1):
            b = cache["blocks"][s]
            # h2 = h1 + act(h1 W1 + b1) W2 + b2
            grads[f"s{s}.b2"] = dh.sum(axis=(0, 1))
            grads[f"s{s}.W2"] = _bmm_t(b["a"], dh)
            dzf = (dh @ P[f"s{s}.W2"].T) * _act_grad(b["z"], b["a"], self.activation)
            grads[f"s{s}.b1"] = dzf.sum(axis=(0, 1))
            grads[f"s{s}.W1"] = _bmm_t(b["h1"], dzf)
            dh1 = dh + dzf @ P[f"s{s}.W1"].T
            # h1 = h + (A V) Wo
            grads[f"s{s}.Wo"] = _bmm_t(b["O"], dh1)
            dO = dh1 @ P[f"s{s}.Wo"].T
            dA = dO @ b["V"].transpose(0, 2, 1)
            dV = b["A"].transpose(0, 2, 1) @ dO
            dS = b["A"] * (dA - np.sum(dA * b["A"], axis=-1, keepdims=True))
            dQ = dS @ b["K"] * scale
            dK = dS.transpose(0, 2, 1) @ b["Q"] * scale
            hb = b["h"]
            grads[f"s{s}.Wq"] = _bmm_t(hb, dQ)
            grads[f"s{s}.Wk"] = _bmm_t(hb, dK)
            grads[f"s{s}.Wv"] = _bmm_t(hb, dV)
            dh = dh1 + dQ @ P[f"s{s}.Wq"].T + dK @ P[f"s{s}.Wk"].T + dV @ P[f"s{s}.Wv"].T
        grads["b_in"] = dh.sum(axis=(0, 1))
        grads["W_in"] = _bmm_t(cache["X"], dh)
        return grads


def _bmm_t(A, B):
    """``sum_b A[b]^T @ B[b]`` for ``n x T x p`` and ``n x T x q`` -> ``p x q``."""
    return A.reshape(-1, A.shape[-1]).T @ B.reshape(-1, B.shape[-1])


# ---------------------------------------------------------------------------
# training

@dataclass
class NeuralTrainConfig:
    seed: int = 0
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.01
    class_weights: tuple[float, float] | None = None
    clip_norm: float = 1.0
    momentum: float = 0.9
    threshold: float = 0.5
    weight_decay: float = 0.0  # L2 on weight matrices, added after clipping

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size and learning rate must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip norm must be positive")


def forward(model: _Net, batch):
    return model.forward(batch)


def backward(model: _Net, cache, labels, class_weights=(1.0, 1.0)):
    return model.backward(cache, np.asarray(labels, dtype=float), class_weights)


def _validation_score(model: _Net, Xv, yv, cw, threshold) -> tuple[float, float]:
    proba = model.predict_proba(Xv)
    f1 = compute_metrics((proba >= threshold).astype(int), yv).f1
    logits = np.log(np.clip(proba, 1e-12, 1.0)) - np.log(np.clip(1.0 - proba, 1e-12, 1.0))
    return f1, -weighted_bce(logits, yv, cw) / max(len(yv), 1)


def train(model: _Net, X, y, config: NeuralTrainConfig | None = None,
          validation: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[_Net, list[float]]:
    """Mini-batch momentum SGD on class-weighted BCE with global-norm clipping.

    Returns the model (updated in place) and the per-epoch mean weighted loss.
    With ``validation=(X_val, y_val)`` the parameters of the epoch with the
    best validation F1 (ties: lower validation loss) are restored at the end.
    """
    config = config or NeuralTrainConfig()
    X = model.check_input(X)
    y = check_binary(y).astype(float)
    cw = config.class_weights
    if cw is None:
        c = sample_weights(y, None)
        cw = (float(c[y == 0][0]), float(c[y == 1][0]))
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    n = len(X)
    curve = []
    best_key, best_params = None, None
    if validation is not None:
        Xv, yv = model.check_input(validation[0]), np.asarray(validation[1], dtype=float)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            _, cache = model.forward(X[idx])
            total += weighted_bce(cache["logit"], y[idx], cw)
            grads = model.backward(cache, y[idx], cw)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) / len(idx)
            factor = 1.0 / len(idx)
            if norm > config.clip_norm:
                factor *= config.clip_norm / norm
            for k, g in grads.items():
                step = factor * g
                if config.weight_decay and model.params[k].ndim >= 2:
                    step = step + config.weight_decay * model.params[k]
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * step
                model.params[k] = model.params[k] + velocity[k]
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise DivergenceError(
                f"{model.kind}: loss became {mean_loss} at epoch {epoch} (learning rate {config.learning_rate})")
        curve.append(mean_loss)
        if validation is not None:
            key = _validation_score(model, Xv, yv, cw, config.threshold)
            if best_key is None or key > best_key:
                best_key, best_params = key, {k: v.copy() for k, v in model.params.items()}
    if best_params is not None:
        model.params = best_params
    model.threshold = config.threshold
    return model, curve
