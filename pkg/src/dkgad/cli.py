"""Command-line entry point: ``dkgad <command> [flags]``.

Every command appends one JSON record to ``manifest.jsonl`` next to its main
output.  Failures print a single line to stderr::

    error: code=<n> kind=<kind> msg="<message>"

Exit codes: 0 success, 1 unexpected error, 2 usage, 3 missing input,
4 schema or syntax violation, 5 training divergence, 6 length or shape
mismatch, 7 invalid or infeasible configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleConfig, EnsembleManifest, align_to_rows, combine, read_predictions, write_predictions
from .features import WindowConfig, build_dataset, chronological_cut, read_dataset_csv, write_dataset_csv
from .graph import CACHE_VERSION, GraphBuildError, build_graph, load_graph, save_graph
from .labels import SplitPlan, expand_labels, extract_events, read_labels_csv
from .metrics import LengthMismatch, baseline_all_anomalous, compute_metrics
from .models import DivergenceError, ShapeMismatch, SingleClassError, WidthMismatch, load_model, save_model
from .models.base import CHECKPOINT_VERSION
from .ontology import microservice_schema
from .pipeline import BenchmarkConfig, fit_model, make_split, model_input, run_benchmark, write_benchmark
from .synth import InfeasibleScenario, ScenarioConfig, generate, load_config
from .ttl import TTLSyntaxError, parse_snapshot, scan_snapshot_dir, validate_quads

log = logging.getLogger("dkgad")

DATA_ENV = "DKGAD_DATA"

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
EXIT_MISSING, EXIT_SCHEMA, EXIT_DIVERGENCE, EXIT_MISMATCH, EXIT_CONFIG = 3, 4, 5, 6, 7


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind, self.msg = code, kind, msg


def data_root() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, "missing_input", f"{what} not found: {path}")
    return path


class Run:
    """Collects the manifest record for one command."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.record = {
            "command": command,
            "argv": sys.argv[1:],
            "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
            "versions": {"dkgad": __version__, "graph_cache": CACHE_VERSION, "checkpoint": CHECKPOINT_VERSION,
                         "python": platform.python_version(), "numpy": np.__version__},
            "inputs": [],
            "outputs": [],
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def inputs(self, *paths):
        self.record["inputs"].extend(str(p) for p in paths)

    def outputs(self, *paths):
        self.record["outputs"].extend(str(p) for p in paths)

    def time(self, stage: str, seconds: float):
        self.record["timings"][stage] = round(seconds, 3)

    def finish(self, manifest_dir: Path, **extra):
        self.record.update(extra)
        self.record["timings"]["total"] = round(time.perf_counter() - self._t0, 3)
        self.record["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        manifest_dir.mkdir(parents=True, exist_ok=True)
        with open(manifest_dir / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(self.record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    run = Run("generate", args)
    if args.config:
        run.inputs(_require(Path(args.config), "scenario config"))
        try:
            config = load_config(args.config)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, "invalid_config", str(exc)) from None
    else:
        config = ScenarioConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = Path(args.out) if args.out else data_root()
    t0 = time.perf_counter()
    truth = generate(config, out)
    run.time("generate", time.perf_counter() - t0)
    run.outputs(out / "snapshots", out / "labels.csv", out / "scenario.cfg")
    print(f"wrote {len(truth.quads)} snapshots and {len(truth.events)} anomaly events to {out}")
    run.finish(out, seed=config.seed, config=_jsonable(asdict(config)))
    return EXIT_OK


def _parse_all(snaps, jobs: int):
    if jobs > 1 and len(snaps) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(parse_snapshot, snaps, chunksize=64))
    return [parse_snapshot(s) for s in snaps]


def cmd_ingest(args) -> int:
    run = Run("ingest", args)
    src = _require(Path(args.inp) if args.inp else data_root(), "input directory")
    snap_dir = src / "snapshots" if (src / "snapshots").is_dir() else src
    out = Path(args.out) if args.out else src / "graph.dkgc"
    schema = microservice_schema()
    t0 = time.perf_counter()
    snaps = scan_snapshot_dir(snap_dir)
    if not snaps:
        raise CliError(EXIT_MISSING, "missing_input", f"no snapshot_<epoch>.ttl files under {snap_dir}")
    quads = [q for part in _parse_all(snaps, args.jobs) for q in part]
    report = validate_quads(quads, schema)
    run.time("parse", time.perf_counter() - t0)
    if args.strict and report.violations:
        raise CliError(EXIT_SCHEMA, "schema_violation",
                       f"{len(report.violations)} type violations; first: {report.violations[0][1]}")
    t0 = time.perf_counter()
    graph = build_graph(report.accepted, schema)
    run.time("build", time.perf_counter() - t0)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    (out.parent / "validation.txt").write_text(report.summary())
    print(report.summary(), end="")
    for w in graph.warnings[:10]:
        print(f"warning: {w}")
    print(f"graph cache: {out} ({len(graph.timestamps)} snapshots)")
    run.inputs(snap_dir)
    run.outputs(out, out.parent / "validation.txt")
    run.finish(out.parent, counts=report.counts)
    return EXIT_OK


def cmd_featurize(args) -> int:
    run = Run("featurize", args)
    root = data_root()
    src = _require(Path(args.inp) if args.inp else root / "graph.dkgc", "graph cache")
    level = args.level.upper()
    graph = load_graph(src)
    events = None
    labels_path = Path(args.labels) if args.labels else src.parent / "labels.csv"
    if labels_path.exists():
        events = read_labels_csv(labels_path)
        run.inputs(labels_path)
    elif args.labels:
        _require(labels_path, "labels file")
    window = WindowConfig(tau=args.tau)
    t0 = time.perf_counter()
    ds = build_dataset(graph, level, window, events, train_fraction=args.train_fraction)
    run.time("features", time.perf_counter() - t0)
    out = Path(args.out) if args.out else src.parent / f"features_{level.lower()}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(ds, out)
    print(f"{level}: {len(ds)} rows x {ds.width} features -> {out}")
    run.inputs(src)
    run.outputs(out)
    run.finish(out.parent, level=level, window=_jsonable(asdict(window)))
    return EXIT_OK


def _events_for(ds, labels_path: Path | None):
    if labels_path is not None and labels_path.exists():
        return read_labels_csv(labels_path)
    if ds.entities and ds.entities[0] == "*":
        return extract_events(ds.labels, [("*", int(t)) for t in ds.times])
    return extract_events(ds.labels, ds.row_index)


def cmd_train(args) -> int:
    run = Run("train", args)
    root = data_root()
    level = (args.level or "d2").lower()
    src = _require(Path(args.inp) if args.inp else root / f"features_{level}.csv", "dataset")
    ds = read_dataset_csv(src)
    if ds.labels is None:
        raise CliError(EXIT_MISSING, "missing_input", f"{src} has no label column")
    seed = args.seed if args.seed is not None else 0
    train_mask = chronological_cut(ds.times, args.train_fraction)
    part = ds.subset(train_mask)
    events = _events_for(part, Path(args.labels) if args.labels else src.parent / "labels.csv")
    plan = make_split(part, events, seed)
    t0 = time.perf_counter()
    model = fit_model(args.model, part.subset(plan.train), part.subset(plan.validation), seed)
    run.time("train", time.perf_counter() - t0)
    out = Path(args.out) if args.out else src.parent / "models" / f"{args.model}_{ds.level.lower()}.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    split_path = out.with_suffix(".split.csv")
    rows = np.flatnonzero(train_mask)
    SplitPlan(rows[plan.train], rows[plan.validation], seed).to_csv(split_path)
    run.outputs(out, split_path)
    curve = getattr(model, "loss_curve", None)
    if curve is not None:
        curve_path = out.with_suffix(".loss.csv")
        curve_path.write_text("epoch,loss\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(curve)))
        run.outputs(curve_path)
    print(f"trained {args.model} on {len(plan.train)} rows ({len(plan.validation)} validation) -> {out}")
    run.inputs(src)
    run.finish(out.parent, seed=seed)
    return EXIT_OK


def _score_rows(model, kind: str, ds):
    return model.predict_proba(model_input(kind, ds))


_KIND_OF = {"isolation_forest": "if", "linear_svm": "svm", "boosted_stumps": "xgb", "mlp": "mlp",
            "tcn": "tcn", "self_attention": "sa"}


def _test_part(ds, args):
    if args.rows == "all":
        return ds
    return ds.subset(~chronological_cut(ds.times, args.train_fraction))


def cmd_predict(args) -> int:
    run = Run("predict", args)
    ckpt = _require(Path(args.checkpoint), "checkpoint")
    src = _require(Path(args.inp), "dataset")
    model = load_model(ckpt)
    ds = _test_part(read_dataset_csv(src), args)
    scores = _score_rows(model, _KIND_OF[model.kind], ds)
    labels = (scores >= model.threshold).astype(np.int8)
    out = Path(args.out) if args.out else ckpt.parent.parent / "predictions" / (ckpt.stem + ".csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, ds.row_index, scores, labels)
    print(f"{len(ds)} predictions ({int(labels.sum())} anomalous) -> {out}")
    run.inputs(ckpt, src)
    run.outputs(out)
    run.finish(out.parent)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    run = Run("ensemble", args)
    manifest_path = _require(Path(args.ensemble), "ensemble manifest")
    manifest = EnsembleManifest.load(manifest_path)
    cfg = manifest.config
    if args.mode:
        mechanism = args.mechanism if args.mode == "hard" else None
        if args.mode == "hard" and mechanism is None:
            mechanism = cfg.mechanism or "unanimous"
        cfg = replace(cfg, mode=args.mode, mechanism=mechanism)
    members = []
    for ckpt, data in zip(manifest.checkpoints, manifest.datasets):
        ckpt_p = _require(manifest.resolve(ckpt), "member checkpoint")
        data_p = _require(manifest.resolve(data), "member dataset")
        run.inputs(ckpt_p, data_p)
        model = load_model(ckpt_p)
        ds = _test_part(read_dataset_csv(data_p), args)
        members.append((model, ds, _score_rows(model, _KIND_OF[model.kind], ds)))
    # target rows: the first per-entity member, else the first member
    target_ds = next((ds for _, ds, _ in members if ds.entities and ds.entities[0] != "*"), members[0][1])
    target = target_ds.row_index
    cfg = replace(cfg, member_thresholds=manifest.member_thresholds([m.threshold for m, _, _ in members]))
    matrix = np.stack([align_to_rows(ds.row_index, s, target) for _, ds, s in members])
    labels, combined = combine(cfg, matrix)
    out = Path(args.out) if args.out else manifest_path.with_suffix(".predictions.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, target, combined, labels)
    print(f"{cfg.mode} ensemble of {len(members)} members: {int(labels.sum())}/{len(labels)} anomalous -> {out}")
    run.outputs(out)
    run.finish(out.parent)
    return EXIT_OK


def _truth_vector(path: Path, keys) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header == ["entity", "t_start", "t_end", "class"]:
        return expand_labels(read_labels_csv(path), keys)
    if header and header[-1] == "label":
        with open(path) as fh:
            next(fh)
            return np.array([int(line.rsplit(",", 1)[1]) for line in fh if line.strip()], dtype=np.int8)
    raise CliError(EXIT_SCHEMA, "schema_violation", f"{path}: expected a labels CSV or a file with a label column")


def cmd_evaluate(args) -> int:
    run = Run("evaluate", args)
    pred_path = _require(Path(args.inp), "predictions")
    truth_path = _require(Path(args.labels) if args.labels else data_root() / "labels.csv", "labels")
    keys, scores, predicted = read_predictions(pred_path)
    keys = [(e, t) for e, t in keys]
    actual = _truth_vector(truth_path, keys)
    report = compute_metrics(predicted, actual)
    base = baseline_all_anomalous(actual)
    out = Path(args.out) if args.out else pred_path.parent
    out.mkdir(parents=True, exist_ok=True)
    stem = pred_path.stem
    text = report.to_text(f"metrics for {pred_path.name}") + base.to_text("all-anomalous baseline")
    (out / f"{stem}.report.txt").write_text(text)
    (out / f"{stem}.metrics.kv").write_text(report.to_kv())
    print(text, end="")
    run.inputs(pred_path, truth_path)
    run.outputs(out / f"{stem}.report.txt", out / f"{stem}.metrics.kv")
    run.finish(out, f1=report.f1)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    run = Run("benchmark", args)
    scenario = ScenarioConfig()
    if args.config:
        run.inputs(_require(Path(args.config), "scenario config"))
        try:
            scenario = load_config(args.config)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, "invalid_config", str(exc)) from None
    config = BenchmarkConfig(seed=args.seed if args.seed is not None else 7, n_seeds=args.seeds, scenario=scenario)
    out = Path(args.out) if args.out else data_root() / "benchmark"
    t0 = time.perf_counter()
    result = run_benchmark(config, jobs=args.jobs)
    run.time("benchmark", time.perf_counter() - t0)
    written = write_benchmark(result, out, figures=not args.no_figures)
    print((out / "report.txt").read_text(), end="")
    run.outputs(*written)
    for r in result.seeds:
        for stage, sec in r.timings.items():
            run.time(f"seed{r.seed}/{stage}", sec)
    run.finish(out, seeds=config.seeds, config=_jsonable(asdict(config)))
    return EXIT_OK


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dkgad", description="Anomaly detection on dynamic knowledge graph snapshots.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        return sp

    g = add("generate", cmd_generate, "simulate telemetry snapshots and anomaly labels")
    g.add_argument("--config")
    g.add_argument("--out")
    g.add_argument("--seed", type=int)

    i = add("ingest", cmd_ingest, "parse and validate snapshots into a graph cache")
    i.add_argument("--in", dest="inp")
    i.add_argument("--out")
    i.add_argument("--strict", action="store_true", help="treat literal type violations as fatal")

    f = add("featurize", cmd_featurize, "build a D1/D2/D3 dataset CSV from a graph cache")
    f.add_argument("--in", dest="inp")
    f.add_argument("--out")
    f.add_argument("--level", choices=["d1", "d2", "d3"], default="d2")
    f.add_argument("--labels")
    f.add_argument("--tau", type=int, default=WindowConfig().tau)
    f.add_argument("--train-fraction", type=float, default=0.6)

    t = add("train", cmd_train, "train a model on the chronological training part of a dataset")
    t.add_argument("--in", dest="inp")
    t.add_argument("--out")
    t.add_argument("--model", choices=["if", "svm", "xgb", "mlp", "tcn", "sa"], required=True)
    t.add_argument("--level", choices=["d1", "d2", "d3"])
    t.add_argument("--labels")
    t.add_argument("--seed", type=int)
    t.add_argument("--train-fraction", type=float, default=0.6)

    pr = add("predict", cmd_predict, "score dataset rows with a checkpoint")
    pr.add_argument("--in", dest="inp", required=True)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--out")
    pr.add_argument("--rows", choices=["test", "all"], default="test")
    pr.add_argument("--train-fraction", type=float, default=0.6)

    e = add("ensemble", cmd_ensemble, "combine member checkpoints by soft or hard voting")
    e.add_argument("--ensemble", required=True)
    e.add_argument("--out")
    e.add_argument("--mode", choices=["soft", "hard"])
    e.add_argument("--mechanism", choices=["unanimous", "majority"])
    e.add_argument("--rows", choices=["test", "all"], default="test")
    e.add_argument("--train-fraction", type=float, default=0.6)

    ev = add("evaluate", cmd_evaluate, "score a prediction CSV against labels")
    ev.add_argument("--in", dest="inp", required=True)
    ev.add_argument("--labels")
    ev.add_argument("--out")

    b = add("benchmark", cmd_benchmark, "end-to-end synthetic benchmark over several seeds")
    b.add_argument("--config")
    b.add_argument("--out")
    b.add_argument("--seed", type=int)
    b.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds (default 5)")
    b.add_argument("--no-figures", action="store_true")
    return p


_ERRORS = [
    (FileNotFoundError, EXIT_MISSING, "missing_input"),
    (TTLSyntaxError, EXIT_SCHEMA, "syntax_error"),
    (GraphBuildError, EXIT_SCHEMA, "schema_violation"),
    (DivergenceError, EXIT_DIVERGENCE, "divergence"),
    (LengthMismatch, EXIT_MISMATCH, "length_mismatch"),
    (WidthMismatch, EXIT_MISMATCH, "width_mismatch"),
    (ShapeMismatch, EXIT_MISMATCH, "shape_mismatch"),
    (InfeasibleScenario, EXIT_CONFIG, "infeasible_scenario"),
    (SingleClassError, EXIT_CONFIG, "single_class"),
]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        code, kind, msg = exc.code, exc.kind, exc.msg
    except Exception as exc:  # mapped to exit codes below
        for etype, c, k in _ERRORS:
            if isinstance(exc, etype):
                code, kind, msg = c, k, str(exc)
                break
        else:
            log.debug("unexpected failure", exc_info=True)
            code, kind, msg = EXIT_ERROR, "error", f"{type(exc).__name__}: {exc}"
    print(f"error: code={code} kind={kind} msg={json.dumps(msg)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
