"""Benchmark figures rendered to PNG files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def plot_benchmark(result, out_dir: str | Path) -> list[Path]:
    """F1 bar chart (median with per-seed range) and a precision/recall scatter."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = result.names
    med = np.array([result.median(n) for n in names])
    per_seed = np.array([[r.metrics[n].f1 for r in result.seeds] for n in names])
    base = result.baseline_median("f1")
    n_single = len(result.config.singles)

    fig, ax = plt.subplots(figsize=(9, 0.35 * len(names) + 1.5))
    y = np.arange(len(names))
    colors = ["tab:blue"] * n_single + ["tab:orange"] * (len(names) - n_single)
    ax.barh(y, med, color=colors)
    ax.errorbar(med, y, xerr=[med - per_seed.min(axis=1), per_seed.max(axis=1) - med],
                fmt="none", ecolor="black", capsize=2, lw=0.8)
    ax.axvline(base, color="gray", ls="--", lw=1, label=f"all-anomalous baseline ({base:.3f})")
    ax.set_yticks(y, names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("F1 (median over seeds, bars show min-max)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    bars = out / "f1_by_model.png"
    fig.savefig(bars, dpi=100, metadata=_PNG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 5))
    prec = [result.median(n, "precision") for n in names]
    rec = [result.median(n, "recall") for n in names]
    ax.scatter(rec[:n_single], prec[:n_single], label="single models")
    ax.scatter(rec[n_single:], prec[n_single:], marker="s", label="ensembles")
    for n, r_, p_ in zip(names, rec, prec):
        ax.annotate(n.split()[0], (r_, p_), fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.scatter([1.0], [result.baseline_median("precision")], marker="x", color="gray", label="baseline")
    ax.set_xlim(0, 1.05)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=8)
    fig.tight_layout()
    scatter = out / "precision_recall.png"
    fig.savefig(scatter, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return [bars, scatter]
