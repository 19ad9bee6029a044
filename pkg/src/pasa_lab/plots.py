"""Figure rendering for the CLI report paths.

Every subcommand that writes a delimited table also renders a small
matplotlib figure next to it, so a run directory is inspectable at a
glance without loading the CSVs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _smooth(values: np.ndarray, window: int = 9) -> np.ndarray:
    if len(values) < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def save_training_curves(metrics_rows: Sequence, path: str | Path) -> None:
    """Return / action-count / loss curves over training steps."""
    steps = np.array([r.step for r in metrics_rows])
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [
        ("mean_return", "mean session return"),
        ("mean_actions", "crawler actions per query"),
        ("value_loss", "value loss"),
        ("mean_kl", "KL to imitation policy"),
    ]
    for ax, (attr, label) in zip(axes.ravel(), panels):
        values = np.array([getattr(r, attr) for r in metrics_rows])
        ax.plot(steps, values, alpha=0.35, lw=0.8)
        sm = _smooth(values)
        if len(sm) and len(sm) != len(values):
            ax.plot(steps[len(steps) - len(sm):], sm, lw=1.6)
        ax.set_xlabel("step")
        ax.set_title(label)
        ax.grid(alpha=0.3)
    freeze = [r.step for r in metrics_rows if r.phase == "freeze"]
    if freeze:
        for ax in axes.ravel():
            ax.axvline(max(freeze), color="gray", ls="--", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bc_curve(nll_history: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(nll_history)), nll_history, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean demo NLL")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_eval_summary(eval_result, path: str | Path) -> None:
    """Histogram of per-query crawler recall plus an aggregate bar panel."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    recalls = [q.crawler_recall for q in eval_result.per_query]
    ax1.hist(recalls, bins=np.linspace(0, 1, 21), edgecolor="black", alpha=0.8)
    ax1.set_xlabel("crawler recall")
    ax1.set_ylabel("queries")
    ax1.set_title("per-query crawler recall")
    keys = [k for k in eval_result.aggregates if k != "mean_queue_size"
            and not k.startswith("mean_actions")]
    vals = [eval_result.aggregates[k] for k in keys]
    ax2.bar(range(len(keys)), vals)
    ax2.set_xticks(range(len(keys)))
    ax2.set_xticklabels(keys, rotation=30, ha="right", fontsize=8)
    ax2.set_ylim(0, 1.05)
    ax2.set_title("aggregates")
    ax2.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_ablation_chart(rows: Sequence, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    labels = [r.variant if not r.param else f"{r.variant}={r.param}" for r in rows]
    x = np.arange(len(rows))
    width = 0.38
    ax.bar(x - width / 2, [r.crawler_recall for r in rows], width, label="crawler recall")
    ax.bar(x + width / 2, [r.recall for r in rows], width, label="recall")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
