"""Central finite-difference check of the hand-written network gradients."""

from __future__ import annotations

import numpy as np

from dkgad.models import CausalConvNet, DenseNet, SelfAttentionNet

EPS = 1e-5


def small_net(kind: str, seed: int, activation: str = "tanh"):
    if kind == "mlp":
        return DenseNet(6, hidden=(5, 4), activation=activation, seed=seed), (5, 6)
    if kind == "tcn":
        return CausalConvNet(6, 3, hidden=4, kernel=2, dilations=(1, 2), activation=activation, seed=seed), (5, 6, 3)
    return SelfAttentionNet(5, 3, d_model=6, d_ff=8, n_stacks=2, activation=activation, seed=seed), (5, 5, 3)


def perturb_params(model, rng, scale: float = 0.3) -> None:
    """Move every parameter (biases included) to a random nearby point."""
    for k, v in model.params.items():
        model.params[k] = v + rng.normal(0, scale, np.shape(v))


def max_relative_error(model, X, y, class_weights=(1.0, 3.0)) -> dict[str, float]:
    """Per-parameter-array relative error ``|a-n| / max(|a|+|n|, floor)`` (elementwise max).

    The floor is 1e-5 of the array's largest analytic gradient: entries of saturated or
    nearly dead units sit below the rounding noise of the central difference.
    """
    _, cache = model.forward(X)
    grads = model.backward(cache, y, class_weights)
    out = {}
    for name, p in model.params.items():
        p = np.asarray(p, dtype=float)
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + EPS
            model.params[name] = flat.reshape(p.shape)
            up = model.loss(X, y, class_weights)
            flat[i] = orig - EPS
            model.params[name] = flat.reshape(p.shape)
            down = model.loss(X, y, class_weights)
            flat[i] = orig
            model.params[name] = flat.reshape(p.shape)
            num.reshape(-1)[i] = (up - down) / (2 * EPS)
        a = np.asarray(grads[name], dtype=float)
        denom = np.maximum(np.abs(a) + np.abs(num), max(1e-5 * np.abs(a).max(), 1e-8))
        out[name] = float(np.max(np.abs(a - num) / denom))
    return out


def check(kind: str, seed: int, activation: str = "tanh") -> dict[str, float]:
    rng = np.random.default_rng(seed)
    model, shape = small_net(kind, seed, activation)
    perturb_params(model, rng)
    X = rng.normal(size=shape)
    y = np.array([0, 1, 0, 1, 1], dtype=float)
    return max_relative_error(model, X, y)
