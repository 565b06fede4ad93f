from __future__ import annotations

import numpy as np
import pytest

from dkgad.metrics import compute_metrics
from dkgad.models import (
    CausalConvNet,
    DenseNet,
    DivergenceError,
    NeuralTrainConfig,
    SelfAttentionNet,
    ShapeMismatch,
    backward,
    forward,
    load_model,
    save_model,
    train,
)

from gradcheck import check, small_net


@pytest.mark.parametrize("kind", ["mlp", "tcn", "sa"])
@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("seed", range(3))
def test_finite_difference_gradients(kind, activation, seed):
    errors = check(kind, seed, activation)
    assert max(errors.values()) < 1e-4, errors


def test_zero_weight_mlp_gives_half():
    net = DenseNet(4, hidden=(3,))
    for k in net.params:
        net.params[k] = np.zeros_like(net.params[k])
    assert np.all(net.predict_proba(np.random.default_rng(0).normal(size=(6, 4))) == 0.5)


def test_attention_rows_sum_to_one():
    net = SelfAttentionNet(6, 2, d_model=8, d_ff=16, seed=1)
    X = np.random.default_rng(1).normal(size=(4, 6, 2))
    for A in net.attention(X):
        assert A.shape == (4, 6, 6)
        assert np.allclose(A.sum(axis=-1), 1.0, atol=1e-12) and np.all(A >= 0)


def test_tcn_is_causal():
    net = CausalConvNet(8, 2, hidden=4, kernel=3, dilations=(1, 2), seed=0)
    X = np.random.default_rng(2).normal(size=(3, 8, 2))
    Y = X.copy()
    Y[:, 5:, :] += 10.0
    a, b = net.features(X), net.features(Y)
    assert np.array_equal(a[:, :5], b[:, :5])
    assert not np.allclose(a[:, 5:], b[:, 5:])


def test_zero_class_weight_gives_zero_gradients():
    net, shape = small_net("mlp", 0)
    X = np.random.default_rng(0).normal(size=shape)
    _, cache = forward(net, X)
    grads = backward(net, cache, np.zeros(len(X)), (0.0, 1.0))
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("kind", ["mlp", "tcn", "sa"])
def test_duplicate_sample_doubles_gradient(kind):
    net, shape = small_net(kind, 3)
    x = np.random.default_rng(3).normal(size=(1, *shape[1:]))
    one = backward(net, forward(net, x)[1], [1.0])
    two = backward(net, forward(net, np.vstack([x, x]))[1], [1.0, 1.0])
    for k in one:
        assert np.allclose(two[k], 2 * one[k], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("make", [
    lambda: DenseNet(2, hidden=(8,), seed=0),
    lambda: CausalConvNet(4, 2, hidden=8, kernel=2, dilations=(1, 2), seed=0),
    lambda: SelfAttentionNet(4, 2, d_model=8, d_ff=16, n_stacks=1, seed=0),
])
def test_separable_toy_is_learned(make):
    net = make()
    rng = np.random.default_rng(0)
    y = np.r_[np.zeros(60), np.ones(60)].astype(int)
    base = rng.normal(0, 0.3, (120, 2)) + np.where(y[:, None] == 1, 3.0, -3.0)
    X = base if net.input_shape == (2,) else np.repeat(base[:, None, :], 4, axis=1)
    train(net, X, y, NeuralTrainConfig(epochs=40, batch_size=16, learning_rate=0.05))
    pred = (net.predict_proba(X) >= 0.5).astype(int)
    assert compute_metrics(pred, y).f1 == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(64, 3)) * 100
    y = (X[:, 0] > 0).astype(int)
    with pytest.raises(DivergenceError, match="learning rate 1e\\+200"):
        train(DenseNet(3, hidden=(8,), seed=0), X, y, NeuralTrainConfig(epochs=50, learning_rate=1e200))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch, match=r"\(n, 5, 3\)"):
        SelfAttentionNet(5, 3, d_model=8, d_ff=8).predict_proba(np.zeros((2, 4, 3)))
    with pytest.raises(ShapeMismatch):
        DenseNet(3).predict_proba(np.zeros((2, 4)))


def test_training_is_deterministic():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 5, 3))
    y = (X[:, -1, 0] > 0).astype(int)
    runs = []
    for _ in range(2):
        net = CausalConvNet(5, 3, hidden=4, kernel=2, dilations=(1,), seed=7)
        _, curve = train(net, X, y, NeuralTrainConfig(seed=7, epochs=3, batch_size=8))
        runs.append((curve, net.predict_proba(X)))
    assert runs[0][0] == runs[1][0] and np.array_equal(runs[0][1], runs[1][1])


def test_invalid_config():
    with pytest.raises(ValueError):
        NeuralTrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        NeuralTrainConfig(weight_decay=-1.0)
    with pytest.raises(ValueError):
        DenseNet(3, activation="gelu")


@pytest.mark.parametrize("kind", ["mlp", "tcn", "sa"])
def test_checkpoint_round_trip(tmp_path, kind):
    net, shape = small_net(kind, 5, "relu")
    net.threshold = 0.3
    X = np.random.default_rng(5).normal(size=shape)
    save_model(net, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert type(back) is type(net) and back.threshold == 0.3
    assert np.array_equal(back.predict_proba(X), net.predict_proba(X))
