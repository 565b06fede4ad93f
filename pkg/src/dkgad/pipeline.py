"""Model factory and the end-to-end synthetic benchmark."""

from __future__ import annotations

import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import EnsembleConfig, align_to_rows, combine, write_predictions
from .features import FeatureDataset, WindowConfig, build_dataset, chronological_cut
from .graph import DynamicKnowledgeGraph, build_graph
from .labels import AnomalyEvent, SplitPlan, event_aware_split, random_split
from .metrics import MetricsReport, baseline_all_anomalous, compute_metrics
from .models import (
    CausalConvNet,
    DenseNet,
    NeuralTrainConfig,
    SelfAttentionNet,
    TrainConfig,
    train,
    train_boosted_stumps,
    train_isolation_forest,
    train_linear_svm,
)
from .ontology import microservice_schema
from .synth import ScenarioConfig, generate
from .ttl import validate_quads

log = logging.getLogger(__name__)

MODEL_KINDS = ("if", "svm", "xgb", "mlp", "tcn", "sa")
DISPLAY = {"if": "IF", "svm": "SVM", "xgb": "XGB", "mlp": "MLP", "tcn": "TCN", "sa": "SA"}
SEQUENCE_KINDS = ("tcn", "sa")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    level: str

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def name(self) -> str:
        return f"{DISPLAY[self.kind]}/{self.level}"


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[ModelSpec, ...]
    mode: str = "soft"
    mechanism: str | None = None
    threshold: float = 0.5

    @property
    def name(self) -> str:
        models = "+".join(DISPLAY[m.kind] for m in self.members)
        levels = "+".join(dict.fromkeys(m.level for m in self.members))
        method = self.mode if self.mode == "soft" else f"hard,{self.mechanism}"
        return f"{models} {method} {levels}"


@dataclass(frozen=True)
class Hyper:
    """Desk-scale model settings shared by the benchmark and the CLI."""

    svm_epochs: int = 30
    svm_lr: float = 0.1
    svm_reg: float = 1e-3
    xgb_rounds: int = 100
    xgb_lr: float = 0.3
    if_trees: int = 100
    if_psi: int = 256
    nn_epochs: int = 15
    nn_lr: float = 0.002
    nn_batch: int = 64
    mlp_hidden: tuple[int, ...] = (32, 16)
    tcn_hidden: int = 16
    sa_d_model: int = 16
    sa_d_ff: int = 32
    sa_stacks: int = 2
    select_epoch: bool = False
    nn_weight_decay: float = 0.1


def _m(kind, level):
    return ModelSpec(kind, level)


DEFAULT_SINGLES = (
    _m("mlp", "D1"), _m("xgb", "D2"), _m("svm", "D2"), _m("if", "D2"),
    _m("tcn", "D1"), _m("tcn", "D2"),
    _m("sa", "D1"), _m("sa", "D2"), _m("sa", "D3"),
)

DEFAULT_ENSEMBLES = (
    EnsembleSpec((_m("xgb", "D2"), _m("if", "D2")), "soft"),
    EnsembleSpec((_m("svm", "D2"), _m("if", "D2")), "hard", "unanimous"),
    EnsembleSpec((_m("xgb", "D2"), _m("svm", "D2"), _m("if", "D2")), "soft"),
    EnsembleSpec((_m("xgb", "D2"), _m("svm", "D2"), _m("sa", "D3"), _m("if", "D2")), "hard", "unanimous"),
    EnsembleSpec((_m("xgb", "D2"), _m("svm", "D2"), _m("sa", "D3")), "hard", "majority"),
    EnsembleSpec((_m("xgb", "D2"), _m("svm", "D2"), _m("sa", "D3")), "soft"),
)

HEADLINE_ENSEMBLE = "XGB+SVM+SA soft D2+D3"


# ---------------------------------------------------------------------------
# training one model

def model_input(kind: str, ds: FeatureDataset) -> np.ndarray:
    return ds.sequences() if kind in SEQUENCE_KINDS else ds.X


def make_split(ds: FeatureDataset, events: Sequence[AnomalyEvent], seed: int) -> SplitPlan:
    """Random 80/20 for sequential D1 rows, event-preserving otherwise."""
    if ds.level == "D1":
        return random_split(len(ds), seed)
    return event_aware_split(ds.row_index, events, seed)


def fit_model(kind: str, train_ds: FeatureDataset, val_ds: FeatureDataset | None, seed: int,
              hyper: Hyper | None = None):
    """Train ``kind`` on ``train_ds``; ``val_ds`` helps pick the neural epoch and the IF threshold."""
    hp = hyper or Hyper()
    y = train_ds.labels
    if kind == "svm":
        return train_linear_svm(train_ds.X, y, TrainConfig(seed=seed, epochs=hp.svm_epochs,
                                                           learning_rate=hp.svm_lr, regularization=hp.svm_reg))
    if kind == "xgb":
        return train_boosted_stumps(train_ds.X, y, TrainConfig(seed=seed, rounds=hp.xgb_rounds,
                                                               learning_rate=hp.xgb_lr))
    if kind == "if":
        psi = min(hp.if_psi, len(train_ds))
        model = train_isolation_forest(train_ds.X, n_trees=hp.if_trees, psi=psi, seed=seed)
        # the only supervised step: a threshold picked on the whole labelled training period
        parts = [train_ds] + ([val_ds] if val_ds is not None and val_ds.labels is not None else [])
        labels = np.concatenate([p.labels for p in parts])
        if labels.any():
            scores = np.concatenate([model.predict_proba(p.X) for p in parts])
            model.threshold = select_threshold(scores, labels)
        return model
    seq_len, channels = train_ds.seq_len, None
    if kind == "mlp":
        net = DenseNet(train_ds.width, hidden=hp.mlp_hidden, seed=seed)
    else:
        channels = model_input(kind, train_ds.subset([0])).shape[2]
        if kind == "tcn":
            net = CausalConvNet(seq_len, channels, hidden=hp.tcn_hidden, seed=seed)
        else:
            net = SelfAttentionNet(seq_len, channels, d_model=hp.sa_d_model, d_ff=hp.sa_d_ff,
                                   n_stacks=hp.sa_stacks, seed=seed)
    cfg = NeuralTrainConfig(seed=seed, epochs=hp.nn_epochs, batch_size=hp.nn_batch, learning_rate=hp.nn_lr,
                            weight_decay=hp.nn_weight_decay)
    validation = None
    if hp.select_epoch and val_ds is not None and val_ds.labels is not None and len(val_ds):
        validation = (model_input(kind, val_ds), val_ds.labels)
    net, curve = train(net, model_input(kind, train_ds), y, cfg, validation=validation)
    net.loss_curve = curve
    return net


def select_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold in (0,1) maximising F1 on the given rows (ties: the higher threshold)."""
    cands = np.unique(np.clip(scores, 1e-6, 1 - 1e-6))
    best_t, best_f = 0.5, -1.0
    for t in cands[::-1]:
        f = compute_metrics(scores >= t, labels).f1
        if f > best_f:
            best_t, best_f = float(t), f
    return best_t


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class BenchmarkConfig:
    seed: int = 7
    n_seeds: int = 5
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    train_fraction: float = 0.6
    hyper: Hyper = field(default_factory=Hyper)
    singles: tuple[ModelSpec, ...] = DEFAULT_SINGLES
    ensembles: tuple[EnsembleSpec, ...] = DEFAULT_ENSEMBLES

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_seeds)]


@dataclass
class SeedResult:
    seed: int
    baseline: MetricsReport
    metrics: dict[str, MetricsReport]
    predictions: dict[str, tuple[np.ndarray, np.ndarray]]  # name -> (scores, labels) on target rows
    target_rows: list[tuple[str, int]]
    actual: np.ndarray
    timings: dict[str, float]


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    seeds: list[SeedResult]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.config.singles] + [e.name for e in self.config.ensembles]

    def median(self, name: str, field_: str = "f1") -> float:
        return float(statistics.median(getattr(r.metrics[name], field_) for r in self.seeds))

    def baseline_median(self, field_: str = "f1") -> float:
        return float(statistics.median(getattr(r.baseline, field_) for r in self.seeds))

    def best_single(self) -> tuple[str, float]:
        return max(((s.name, self.median(s.name)) for s in self.config.singles), key=lambda kv: kv[1])

    def checks(self) -> dict[str, tuple[bool, str]]:
        """The directional benchmark properties, each with a short explanation."""
        out = {}
        worst = []
        for s in self.config.singles:
            for r in self.seeds:
                if not r.metrics[s.name].f1 > r.baseline.f1:
                    worst.append(f"{s.name}@{r.seed}")
        out["singles_beat_baseline"] = (not worst, "failures: " + (",".join(worst) or "none"))
        names = {s.name for s in self.config.singles}
        if {"SA/D3", "SA/D1"} <= names:
            a, b = self.median("SA/D3"), self.median("SA/D1")
            out["sa_d3_over_d1"] = (a > b, f"SA/D3 {a:.5f} vs SA/D1 {b:.5f}")
        if {"XGB/D2", "MLP/D1"} <= names:
            a, b = self.median("XGB/D2"), self.median("MLP/D1")
            out["xgb_d2_over_mlp_d1"] = (a > b, f"XGB/D2 {a:.5f} vs MLP/D1 {b:.5f}")
        if HEADLINE_ENSEMBLE in {e.name for e in self.config.ensembles}:
            best, bf = self.best_single()
            ef = self.median(HEADLINE_ENSEMBLE)
            out["ensemble_over_best_single"] = (ef > bf, f"{HEADLINE_ENSEMBLE} {ef:.5f} vs {best} {bf:.5f}")
        return out


def build_benchmark_graph(scenario: ScenarioConfig) -> tuple[DynamicKnowledgeGraph, list[AnomalyEvent]]:
    schema = microservice_schema()
    truth = generate(scenario)
    quads = truth.all_quads()
    report = validate_quads(quads, schema)
    return build_graph(report.accepted, schema), truth.events


def run_seed(config: BenchmarkConfig, seed: int) -> SeedResult:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    graph, events = build_benchmark_graph(replace(config.scenario, seed=seed))
    timings["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    levels = sorted({s.level for s in config.singles} | {m.level for e in config.ensembles for m in e.members})
    datasets = {lv: build_dataset(graph, lv, config.window, events, train_fraction=config.train_fraction)
                for lv in levels}
    timings["features"] = time.perf_counter() - t0

    # evaluation rows: per-entity rows of the held-out chronological tail
    ref = datasets.get("D2") or datasets.get("D1") or next(iter(datasets.values()))
    if ref.level == "D3":
        entity_ds = build_dataset(graph, "D1", config.window, events, train_fraction=config.train_fraction)
    else:
        entity_ds = ref
    test_mask = ~chronological_cut(entity_ds.times, config.train_fraction)
    target = [k for k, m in zip(entity_ds.row_index, test_mask) if m]
    actual = entity_ds.labels[test_mask]

    splits = {}
    for lv, ds in datasets.items():
        train_mask = chronological_cut(ds.times, config.train_fraction)
        train_part = ds.subset(train_mask)
        plan = make_split(train_part, events, seed)
        splits[lv] = (train_part.subset(plan.train), train_part.subset(plan.validation), ds.subset(~train_mask))

    wanted = list(dict.fromkeys(list(config.singles) + [m for e in config.ensembles for m in e.members]))
    scores: dict[ModelSpec, np.ndarray] = {}
    models = {}
    for spec in wanted:
        t0 = time.perf_counter()
        tr, va, te = splits[spec.level]
        model = fit_model(spec.kind, tr, va, seed, config.hyper)
        raw = model.predict_proba(model_input(spec.kind, te))
        scores[spec] = align_to_rows(te.row_index, raw, target)
        models[spec] = model
        timings[spec.name] = time.perf_counter() - t0
        log.info("seed %d %s trained in %.1fs", seed, spec.name, timings[spec.name])

    metrics: dict[str, MetricsReport] = {}
    predictions: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for spec in config.singles:
        labels = (scores[spec] >= models[spec].threshold).astype(np.int8)
        metrics[spec.name] = compute_metrics(labels, actual)
        predictions[spec.name] = (scores[spec], labels)
    for ens in config.ensembles:
        cfg = EnsembleConfig(
            members=[m.name for m in ens.members], mode=ens.mode, mechanism=ens.mechanism,
            threshold=ens.threshold, member_thresholds=[models[m].threshold for m in ens.members],
        )
        labels, combined = combine(cfg, np.stack([scores[m] for m in ens.members]))
        metrics[ens.name] = compute_metrics(labels, actual)
        predictions[ens.name] = (combined, labels)
    return SeedResult(seed, baseline_all_anomalous(actual), metrics, predictions, target, actual, timings)


def run_benchmark(config: BenchmarkConfig | None = None, jobs: int = 1) -> BenchmarkResult:
    """Run every seed; jobs > 1 spreads seeds over worker processes."""
    config = config or BenchmarkConfig()
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(config.seeds))) as pool:
            results = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
        return BenchmarkResult(config, results)
    results = []
    for seed in config.seeds:
        t0 = time.perf_counter()
        results.append(run_seed(config, seed))
        log.info("seed %d done in %.1fs", seed, time.perf_counter() - t0)
    return BenchmarkResult(config, results)


# ---------------------------------------------------------------------------
# reports

def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower()


def format_report(result: BenchmarkResult) -> str:
    cfg = result.config
    lines = [
        "synthetic anomaly detection benchmark",
        f"seeds: {' '.join(map(str, cfg.seeds))}",
        f"snapshots per seed: {cfg.scenario.duration}, cadence {cfg.scenario.cadence}s, "
        f"target anomaly rate {cfg.scenario.anomaly_rate}",
        f"test rows: last {1 - cfg.train_fraction:.0%} of snapshots, per (service, t)",
        "values are medians over seeds",
        "",
        "Table 1: single models",
        f"{'Model':<10} {'Phase':<6} {'F1':>8} {'Precision':>10} {'Recall':>8}",
        f"{'Baseline':<10} {'-':<6} {result.baseline_median('f1'):>8.5f} "
        f"{result.baseline_median('precision'):>10.5f} {result.baseline_median('recall'):>8.5f}",
    ]
    for s in cfg.singles:
        lines.append(f"{DISPLAY[s.kind]:<10} {s.level:<6} {result.median(s.name):>8.5f} "
                     f"{result.median(s.name, 'precision'):>10.5f} {result.median(s.name, 'recall'):>8.5f}")
    lines += ["", "Table 2: ensembles",
              f"{'Ensemble':<22} {'Method':<16} {'Phase':<7} {'F1':>8} {'Precision':>10} {'Recall':>8}"]
    for e in cfg.ensembles:
        models = "+".join(DISPLAY[m.kind] for m in e.members)
        method = e.mode if e.mode == "soft" else f"hard,{e.mechanism}"
        levels = "+".join(dict.fromkeys(m.level for m in e.members))
        lines.append(f"{models:<22} {method:<16} {levels:<7} {result.median(e.name):>8.5f} "
                     f"{result.median(e.name, 'precision'):>10.5f} {result.median(e.name, 'recall'):>8.5f}")
    lines += ["", "checks"]
    for key, (ok, detail) in result.checks().items():
        lines.append(f"  {key}: {'PASS' if ok else 'FAIL'} ({detail})")
    return "\n".join(lines) + "\n"


def format_kv(result: BenchmarkResult) -> str:
    lines = []
    for r in result.seeds:
        b = r.baseline
        lines.append(f"seed={r.seed} model=Baseline f1={b.f1:.6f} precision={b.precision:.6f} recall={b.recall:.6f}")
        for name in result.names:
            m = r.metrics[name]
            lines.append(f"seed={r.seed} model={name.replace(' ', '_')} f1={m.f1:.6f} precision={m.precision:.6f} "
                         f"recall={m.recall:.6f} tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}")
    for name in result.names:
        lines.append(f"median model={name.replace(' ', '_')} f1={result.median(name):.6f}")
    return "\n".join(lines) + "\n"


def format_csv(result: BenchmarkResult) -> str:
    rows = ["table,model,phase,method,median_f1,median_precision,median_recall"]
    rows.append(f"single,Baseline,-,-,{result.baseline_median('f1'):.6f},"
                f"{result.baseline_median('precision'):.6f},{result.baseline_median('recall'):.6f}")
    for s in result.config.singles:
        rows.append(f"single,{DISPLAY[s.kind]},{s.level},-,{result.median(s.name):.6f},"
                    f"{result.median(s.name, 'precision'):.6f},{result.median(s.name, 'recall'):.6f}")
    for e in result.config.ensembles:
        models = "+".join(DISPLAY[m.kind] for m in e.members)
        method = e.mode if e.mode == "soft" else f"hard {e.mechanism}"
        levels = "+".join(dict.fromkeys(m.level for m in e.members))
        rows.append(f"ensemble,{models},{levels},{method},{result.median(e.name):.6f},"
                    f"{result.median(e.name, 'precision'):.6f},{result.median(e.name, 'recall'):.6f}")
    return "\n".join(rows) + "\n"


def write_benchmark(result: BenchmarkResult, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write report.txt, metrics.kv, summary.csv, per-seed prediction CSVs and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, text in (("report.txt", format_report(result)), ("metrics.kv", format_kv(result)),
                        ("summary.csv", format_csv(result))):
        (out / fname).write_text(text)
        written.append(out / fname)
    for r in result.seeds:
        pdir = out / "predictions" / f"seed{r.seed}"
        pdir.mkdir(parents=True, exist_ok=True)
        for name, (sc, lab) in r.predictions.items():
            path = pdir / f"{_slug(name)}.csv"
            write_predictions(path, r.target_rows, sc, lab)
            written.append(path)
    if figures:
        from .plotting import plot_benchmark

        written.extend(plot_benchmark(result, out / "figures"))
    return written
