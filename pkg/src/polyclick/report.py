"""Figure rendering for the report paths: ROC curves, metric series, scaling."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .calibration import RocCurve, ThresholdChoice

METRIC_KEYS = ("precision", "recall", "accuracy", "negative_rate")


def save_roc_figure(
    curve: RocCurve,
    path: str | Path,
    choice: ThresholdChoice | None = None,
    title: str = "ROC",
) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    fp = [p.fp_rate for p in curve.points]
    tp = [p.tp_rate for p in curve.points]
    ax.plot(fp, tp, marker=".", lw=1.2, label=f"AUC = {curve.auc:.4f}")
    ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8, label="chance")
    if choice is not None:
        ax.scatter([choice.fp_rate], [choice.tp_rate], c="red", zorder=3,
                   label=f"threshold (J = {choice.youden:.3f})")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_figure(rows: Sequence[dict], path: str | Path,
                        title: str = "Ensemble metrics per batch") -> None:
    """Four-line time-series plot over evaluation batches."""
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = [row["batch"] for row in rows]
    for key in METRIC_KEYS:
        ys = [row.get(key) for row in rows]
        ax.plot(xs, [y if y is not None else float("nan") for y in ys],
                marker=".", lw=1.0, label=key)
    ax.set_xlabel("batch")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_scaling_figure(rows: Sequence[dict], path: str | Path,
                        title: str = "Scoring throughput") -> None:
    """QPS versus thread count from a bench sweep."""
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [row["threads"] for row in rows]
    ys = [row["qps"] for row in rows]
    ax.plot(xs, ys, marker="o", lw=1.2)
    ax.set_xlabel("threads")
    ax.set_ylabel("impression-ensemble evaluations / s")
    ax.set_xticks(xs)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
