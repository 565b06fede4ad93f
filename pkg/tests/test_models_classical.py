from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkgad.models import (
    BoostedStumpsModel,
    LinearSvmModel,
    SingleClassError,
    TrainConfig,
    WidthMismatch,
    balanced_class_weights,
    load_model,
    predict_labels,
    predict_proba,
    save_model,
    train_boosted_stumps,
    train_isolation_forest,
    train_linear_svm,
)
from dkgad.models.isolation_forest import average_path_length, isolation_score
from dkgad.models.svm import svm_objective, svm_subgradient


def _blobs(seed, n=200, sep=5.0, pos_frac=0.5):
    rng = np.random.default_rng(seed)
    n_pos = int(n * pos_frac)
    X = np.vstack([rng.normal(0, 1, (n - n_pos, 2)), rng.normal(sep, 1, (n_pos, 2))])
    y = np.r_[np.zeros(n - n_pos), np.ones(n_pos)].astype(int)
    return X, y


# ---------------------------------------------------------------------------
# isolation forest

def test_normaliser_conventions():
    assert average_path_length(1) == 0.0 and average_path_length(2) == 1.0
    assert isolation_score(average_path_length(256), 256) == 0.5
    assert isolation_score(1e-9, 256) == pytest.approx(1.0, abs=1e-9)


def test_psi_one_scores_half():
    X = np.random.default_rng(0).normal(size=(20, 3))
    model = train_isolation_forest(X, n_trees=5, psi=1, seed=0)
    assert np.all(model.predict_proba(X) == 0.5)


def test_if_errors():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError):
        train_isolation_forest(X, psi=8)
    with pytest.raises(ValueError):
        train_isolation_forest(X, psi=0)
    model = train_isolation_forest(X + np.arange(4)[:, None], n_trees=3, psi=4)
    with pytest.raises(WidthMismatch):
        model.predict_proba(np.zeros((1, 3)))


@pytest.mark.parametrize("seed", range(20))
def test_if_isolates_outlier(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 0.5, (100, 2)), [[10.0, 10.0]]])
    model = train_isolation_forest(X, n_trees=100, psi=64, seed=seed)
    s = model.predict_proba(X)
    assert s[-1] > s[:-1].max()


def _naive_path(tree, x, psi):
    feat, split, left, right, size = tree
    node, depth = 0, 0
    while feat[node] >= 0:
        node = left[node] if x[feat[node]] < split[node] else right[node]
        depth += 1
    return depth + float(average_path_length(size[node]))


def test_if_scores_match_per_tree_recomputation():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 4))
    model = train_isolation_forest(X, n_trees=25, psi=32, seed=4)
    Q = rng.normal(size=(100, 4)) * 2
    trees = list(zip(model.feature, model.split, model.left, model.right, model.size))
    for x, got in zip(Q, model.predict_proba(Q)):
        h = np.mean([_naive_path(t, x, model.psi) for t in trees])
        assert got == pytest.approx(2.0 ** (-h / float(average_path_length(model.psi))), abs=1e-12)
    depth_limit = int(np.ceil(np.log2(model.psi)))
    assert model.height_limit == depth_limit


def test_if_duplicate_and_permutation_invariance():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 3))
    m = train_isolation_forest(X, n_trees=30, psi=32, seed=1)
    s = m.predict_proba(np.vstack([X[:5], X[:5]]))
    assert np.array_equal(s[:5], s[5:])
    # split features are drawn by index, so invariance holds in distribution: large forests agree closely
    perm = [2, 0, 1]
    big = train_isolation_forest(X, n_trees=2000, psi=32, seed=1)
    mp = train_isolation_forest(X[:, perm], n_trees=2000, psi=32, seed=1)
    a, b = mp.predict_proba(X[:, perm]), big.predict_proba(X)
    assert np.abs(a - b).max() < 0.02
    assert np.argmax(a) == np.argmax(b)


def test_if_is_deterministic():
    X = np.random.default_rng(3).normal(size=(50, 2))
    a = train_isolation_forest(X, n_trees=10, psi=16, seed=9).predict_proba(X)
    b = train_isolation_forest(X, n_trees=10, psi=16, seed=9).predict_proba(X)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# linear svm

def test_svm_separable_blobs():
    X, y = _blobs(0)
    model = train_linear_svm(X, y, TrainConfig(epochs=30))
    assert np.array_equal(predict_labels(model, X), y)


def test_svm_single_class():
    with pytest.raises(SingleClassError):
        train_linear_svm(np.zeros((5, 2)), np.zeros(5))


def test_svm_flat_region_subgradient():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    w = rng.normal(size=3)
    s = np.sign(X @ w)
    X = X * (3.0 / np.abs(X @ w))[:, None]  # margins |Xw| = 3 > 1
    gw, gb = svm_subgradient(w, 0.0, X, s, np.ones(10), 0.01)
    assert np.array_equal(gw, 2 * 0.01 * w) and gb == 0.0


def test_svm_objective_non_increasing():
    X, y = _blobs(4, sep=1.5)
    model = train_linear_svm(X, y, TrainConfig(epochs=25, learning_rate=0.5))
    diffs = np.diff(model.objective)
    assert np.all(diffs <= 1e-6)
    s = np.where(y == 1, 1.0, -1.0)
    c = np.where(y == 1, *balanced_class_weights(y)[::-1])
    assert svm_objective(model.weights, model.bias, X, s, c, 1e-3) == pytest.approx(model.objective[-1])


def test_svm_anomaly_weight_raises_recall():
    X, y = _blobs(7, n=400, sep=1.0, pos_frac=0.1)
    rec = []
    for w_pos in (1.0, 2.0):
        m = train_linear_svm(X, y, TrainConfig(epochs=30, class_weights=(1.0, w_pos)))
        m.calibration = (1.0, 0.0)  # raw margin sign
        pred = predict_labels(m, X)
        rec.append(pred[y == 1].mean())
    assert rec[1] >= rec[0]


def test_svm_midpoint_probability():
    model = LinearSvmModel(np.array([1.0, -1.0]), 0.0, (1.0, 0.0))
    assert predict_proba(model, [[2.0, 2.0]]).tolist() == [0.5]


# ---------------------------------------------------------------------------
# boosted stumps

def test_stump_recovers_threshold():
    x = np.array([0.5, 1.0, 2.0, 2.9, 3.2, 4.0, 5.5])[:, None]
    y = (x[:, 0] > 3).astype(int)
    model = train_boosted_stumps(x, y, TrainConfig(rounds=1, learning_rate=1.0))
    assert model.feature[0] == 0 and 2.9 < model.split[0] <= 3.2
    assert np.array_equal(predict_labels(model, x), y)


def test_stumps_replay_and_importance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(150, 4))
    y = (X[:, 1] + 0.3 * X[:, 2] > 0.2).astype(int)
    model = train_boosted_stumps(X, y, TrainConfig(rounds=30, learning_rate=0.3))
    replay = np.zeros(len(X))
    for f, thr, lv, rv in zip(model.feature, model.split, model.left_value, model.right_value):
        out = np.full(len(X), lv) if f < 0 else np.where(X[:, f] <= thr, lv, rv)
        replay += model.learning_rate * out
    assert np.allclose(replay, model.decision_function(X), rtol=0, atol=1e-12)
    assert model.feature_importance.sum() == pytest.approx(1.0)
    assert int(np.argmax(model.feature_importance)) == 1


def test_stumps_zero_variance_gives_constant():
    model = train_boosted_stumps(np.ones((6, 2)), [0, 0, 0, 1, 1, 0], TrainConfig(rounds=3))
    assert np.all(model.feature == -1)
    assert np.ptp(model.predict_proba(np.ones((3, 2)))) == 0


def test_boosted_midpoint_probability():
    model = BoostedStumpsModel(np.array([-1]), np.zeros(1), np.zeros(1), np.zeros(1), 0.3, 2)
    assert predict_proba(model, [[1.0, 2.0]]).tolist() == [0.5]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(threshold=1.0)
    with pytest.raises(ValueError):
        TrainConfig(class_weights=(0.0, 1.0))
    w0, w1 = balanced_class_weights([0, 0, 0, 1])
    assert (3 * w0 + w1) / 4 == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_scores_in_unit_interval_and_deterministic(seed):
    X, y = _blobs(seed, n=60, sep=1.0)
    for make in (lambda: train_linear_svm(X, y, TrainConfig(seed=seed, epochs=5)),
                 lambda: train_boosted_stumps(X, y, TrainConfig(seed=seed, rounds=10)),
                 lambda: train_isolation_forest(X, n_trees=10, psi=16, seed=seed)):
        a, b = make(), make()
        pa, pb = a.predict_proba(X), b.predict_proba(X)
        assert np.array_equal(pa, pb)
        assert np.all((pa >= 0) & (pa <= 1))
        assert np.array_equal(predict_labels(a, X), (pa >= a.threshold).astype(np.int8))


def test_checkpoint_round_trip(tmp_path):
    X, y = _blobs(1, n=80, sep=2.0)
    for model in (train_linear_svm(X, y), train_boosted_stumps(X, y, TrainConfig(rounds=5)),
                  train_isolation_forest(X, n_trees=5, psi=16)):
        path = tmp_path / f"{model.kind}.npz"
        save_model(model, path)
        back = load_model(path)
        assert type(back) is type(model)
        assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
        assert back.threshold == model.threshold
