from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dkgad.ensemble import (
    EnsembleConfig,
    EnsembleManifest,
    align_to_rows,
    combine,
    read_predictions,
    vote_hard,
    vote_soft,
    write_predictions,
)

votes = st.integers(1, 7).flatmap(
    lambda m: arrays(np.int8, st.tuples(st.just(m), st.integers(1, 30)), elements=st.integers(0, 1)))


def test_soft_example():
    labels, avg = vote_soft([[0.9], [0.2], [0.7]], 0.5)
    assert labels.tolist() == [1] and abs(avg[0] - 0.6) < 1e-12


def test_hard_examples():
    v = [[1], [1], [0]]
    assert vote_hard(v, "unanimous").tolist() == [0]
    assert vote_hard(v, "majority").tolist() == [1]
    assert vote_hard([[1], [1]], "majority").tolist() == [1]
    assert vote_hard([[1], [0]], "majority").tolist() == [0]


def test_errors():
    with pytest.raises(ValueError):
        vote_soft([[0.1, 0.2], [0.3]])
    with pytest.raises(ValueError):
        vote_soft([[1.2]])
    with pytest.raises(ValueError):
        vote_hard([[2, 0]], "majority")
    with pytest.raises(ValueError):
        EnsembleConfig(["a"])
    with pytest.raises(ValueError):
        EnsembleConfig(["a", "b"], mode="soft", mechanism="majority")
    with pytest.raises(ValueError):
        EnsembleConfig(["a", "b"], mode="hard")


@settings(max_examples=300, deadline=None)
@given(votes)
def test_unanimous_subset_of_majority(v):
    u, m = vote_hard(v, "unanimous"), vote_hard(v, "majority")
    assert np.all(u <= m)


@settings(max_examples=300, deadline=None)
@given(votes, st.data())
def test_monotone_in_each_vote(v, data):
    i = data.draw(st.integers(0, v.shape[0] - 1))
    j = data.draw(st.integers(0, v.shape[1] - 1))
    up = v.copy()
    up[i, j] = 1
    for mech in ("unanimous", "majority"):
        assert np.all(vote_hard(up, mech) >= vote_hard(v, mech))


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 1)), st.integers(1, 6), st.floats(0.01, 0.99))
def test_soft_idempotent(scores, m, thr):
    labels, avg = vote_soft(np.tile(scores, (m, 1)), thr)
    assert np.array_equal(avg, scores)
    assert np.array_equal(labels, (scores >= thr).astype(np.int8))


def test_combine_hard_uses_member_thresholds():
    cfg = EnsembleConfig(["a", "b"], mode="hard", mechanism="unanimous", member_thresholds=[0.3, 0.8])
    labels, frac = combine(cfg, [[0.4, 0.4], [0.9, 0.5]])
    assert labels.tolist() == [1, 0] and frac.tolist() == [1.0, 0.5]


def test_align_broadcasts_per_snapshot_scores():
    target = [("a", 1), ("b", 1), ("a", 2)]
    assert align_to_rows([(None, 1), (None, 2)], [0.1, 0.9], target).tolist() == [0.1, 0.1, 0.9]
    assert align_to_rows([("b", 1), ("a", 1), ("a", 2)], [0.5, 0.2, 0.3], target).tolist() == [0.2, 0.5, 0.3]
    with pytest.raises(KeyError):
        align_to_rows([("a", 1)], [0.5], target)


def test_manifest_round_trip(tmp_path):
    doc = {"mode": "hard", "mechanism": "majority", "threshold": 0.5,
           "members": [{"name": "x", "checkpoint": "m/x.npz", "dataset": "d.csv", "threshold": 0.3},
                       {"name": "y", "checkpoint": "m/y.npz", "dataset": "d.csv"}]}
    (tmp_path / "e.json").write_text(json.dumps(doc))
    man = EnsembleManifest.load(tmp_path / "e.json")
    assert man.config.mechanism == "majority"
    assert man.member_thresholds([0.9, 0.7]) == [0.3, 0.7]
    assert man.resolve("m/x.npz") == tmp_path / "m/x.npz"
    assert json.loads(man.dump())["members"] == doc["members"]


def test_prediction_csv_round_trip(tmp_path):
    rows = [("http://x#a", 15), (None, 30)]
    write_predictions(tmp_path / "p.csv", rows, [0.25, 0.75], [0, 1])
    text = (tmp_path / "p.csv").read_text()
    assert text == "entity,t,score,label\nhttp://x#a,15,0.250000,0\n*,30,0.750000,1\n"
    keys, scores, labels = read_predictions(tmp_path / "p.csv")
    assert keys == rows and scores.tolist() == [0.25, 0.75] and labels.tolist() == [0, 1]
