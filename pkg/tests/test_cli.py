from __future__ import annotations

import json
import subprocess
import sys

import pytest

from dkgad.cli import main
from dkgad.ensemble import read_predictions

SMALL = "seed = 4\nduration = 1200\n"


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    root = tmp_path_factory.mktemp("flow")
    (root / "small.cfg").write_text(SMALL)
    assert run("generate", "--config", root / "small.cfg", "--out", root / "data") == 0
    assert run("ingest", "--in", root / "data") == 0
    for level in ("d2", "d3"):
        assert run("featurize", "--in", root / "data" / "graph.dkgc", "--level", level) == 0
    for model, level in (("xgb", "d2"), ("svm", "d2"), ("if", "d2"), ("sa", "d3")):
        assert run("train", "--in", root / "data" / f"features_{level}.csv", "--model", model, "--seed", 1) == 0
    return root


def test_flow_writes_expected_files(flow):
    data = flow / "data"
    for name in ("labels.csv", "scenario.cfg", "graph.dkgc", "validation.txt", "features_d2.csv",
                 "features_d3.csv", "models/xgb_d2.npz", "models/xgb_d2.split.csv", "models/sa_d3.npz"):
        assert (data / name).exists(), name
    assert len(list((data / "snapshots").glob("snapshot_*.ttl"))) == 1200
    curve = (data / "models/sa_d3.loss.csv").read_text().splitlines()
    assert curve[0] == "epoch,loss" and len(curve) > 1
    assert all(float(line.split(",")[1]) >= 0 for line in curve[1:])
    assert not (data / "models/xgb_d2.loss.csv").exists()


def test_predict_and_evaluate(flow, capsys):
    data = flow / "data"
    assert run("predict", "--in", data / "features_d2.csv", "--checkpoint", data / "models/xgb_d2.npz") == 0
    pred = data / "predictions" / "xgb_d2.csv"
    keys, scores, labels = read_predictions(pred)
    assert len(keys) == len(scores) == len(labels) > 0
    assert all(e != "*" for e, _ in keys)
    assert run("evaluate", "--in", pred, "--labels", data / "labels.csv") == 0
    kv = dict(line.split("=") for line in (data / "predictions" / "xgb_d2.metrics.kv").read_text().splitlines())
    assert 0.0 <= float(kv["f1"]) <= 1.0
    assert int(kv["tp"]) + int(kv["fp"]) + int(kv["fn"]) + int(kv["tn"]) == len(keys)
    assert "all-anomalous baseline" in capsys.readouterr().out


def test_ensemble_soft_and_hard(flow):
    data = flow / "data"
    doc = {"mode": "soft", "threshold": 0.5, "members": [
        {"name": "xgb", "checkpoint": "models/xgb_d2.npz", "dataset": "features_d2.csv"},
        {"name": "svm", "checkpoint": "models/svm_d2.npz", "dataset": "features_d2.csv"},
        {"name": "sa", "checkpoint": "models/sa_d3.npz", "dataset": "features_d3.csv"},
    ]}
    (data / "ens.json").write_text(json.dumps(doc))
    assert run("ensemble", "--ensemble", data / "ens.json") == 0
    keys, soft, _ = read_predictions(data / "ens.predictions.csv")
    assert run("ensemble", "--ensemble", data / "ens.json", "--mode", "hard", "--mechanism", "unanimous",
               "--out", data / "hard.csv") == 0
    keys_h, frac, labels = read_predictions(data / "hard.csv")
    assert keys_h == keys and all(e != "*" for e, _ in keys)
    assert set(frac.round(6).tolist()) <= {0.0, 0.333333, 0.666667, 1.0}
    assert (labels == (frac == 1.0)).all()


def test_manifest_records(flow):
    lines = (flow / "data" / "manifest.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    commands = [r["command"] for r in records]
    assert commands[:3] == ["generate", "ingest", "featurize"]
    for r in records:
        assert {"args", "versions", "inputs", "outputs", "timings", "finished_at"} <= r.keys()
        assert "total" in r["timings"] and r["versions"]["dkgad"]
    assert records[0]["seed"] == 4


def test_missing_input_exit_code(tmp_path, capsys):
    assert run("ingest", "--in", tmp_path / "nowhere") == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: code=3 kind=missing_input msg=\"")


def test_shape_mismatch_exit_code(flow, capsys):
    data = flow / "data"
    code = run("predict", "--in", data / "features_d3.csv", "--checkpoint", data / "models/xgb_d2.npz",
               "--out", flow / "bad.csv")
    assert code == 6
    assert "code=6" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("seed = 1\nwarp_factor = 9\n")
    assert run("generate", "--config", tmp_path / "bad.cfg", "--out", tmp_path / "o") == 7
    assert "kind=invalid_config" in capsys.readouterr().err
    (tmp_path / "tiny.cfg").write_text("duration = 20\n")
    assert run("generate", "--config", tmp_path / "tiny.cfg", "--out", tmp_path / "o") == 7
    assert "kind=infeasible_scenario" in capsys.readouterr().err


def test_usage_error_and_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dkgad", "train"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "dkgad", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "benchmark" in proc.stdout


def test_data_root_env(tmp_path, monkeypatch):
    (tmp_path / "small.cfg").write_text(SMALL)
    monkeypatch.setenv("DKGAD_DATA", str(tmp_path / "env"))
    assert run("generate", "--config", tmp_path / "small.cfg") == 0
    assert (tmp_path / "env" / "labels.csv").exists()
