"""Static figures for run artifacts (headless-safe Agg backend)."""

from __future__ import annotations

import json
import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_heatmap(
    matrix: np.ndarray,
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    path: str,
    title: str = "",
) -> str:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape != (len(row_labels), len(col_labels)):
        raise ValueError(
            f"matrix {m.shape} does not match labels ({len(row_labels)}, {len(col_labels)})"
        )
    fig, ax = plt.subplots(figsize=(1.2 * len(col_labels) + 2, 1.0 * len(row_labels) + 2))
    im = ax.imshow(m, cmap="viridis")
    ax.set_xticks(range(len(col_labels)), col_labels, rotation=30, ha="right")
    ax.set_yticks(range(len(row_labels)), row_labels)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{m[i, j]:.3f}", ha="center", va="center",
                    color="white" if m[i, j] < m.max() * 0.6 else "black", fontsize=9)
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[dict], path: str, xkey: str = "lam", ykey: str = "accuracy") -> str:
    if not rows:
        raise ValueError("nothing to plot")
    xs = [r[xkey] for r in rows]
    ys = [r[ykey] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("task loss weight")
    ax.set_ylabel("top-1 accuracy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curves(run_dir: str, path: Optional[str] = None) -> str:
    """Loss and task-accuracy curves from a run's step metrics."""
    mpath = os.path.join(run_dir, "metrics.jsonl")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no metrics.jsonl in {run_dir}")
    recs = []
    with open(mpath) as f:
        for line in f:
            if line.strip():
                recs.append(json.loads(line))
    if not recs:
        raise ValueError(f"{mpath} is empty")
    steps = [r["step"] for r in recs]
    loss_keys = sorted(k for k in recs[0] if k.startswith("loss"))
    acc_keys = sorted(k for k in recs[0] if k.startswith("acc_"))

    n_pan = 2 if acc_keys else 1
    fig, axes = plt.subplots(1, n_pan, figsize=(5.5 * n_pan, 3.5))
    axes = np.atleast_1d(axes)
    for k in loss_keys:
        axes[0].plot(steps, [r[k] for r in recs], label=k, lw=1)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend(fontsize=8)
    axes[0].grid(alpha=0.3)
    if acc_keys:
        for k in acc_keys:
            axes[1].plot(steps, [r[k] for r in recs], label=k, lw=1)
        axes[1].set_xlabel("step")
        axes[1].set_ylabel("task accuracy")
        axes[1].set_ylim(0, 1)
        axes[1].legend(fontsize=8)
        axes[1].grid(alpha=0.3)
    fig.tight_layout()
    out = path or os.path.join(run_dir, "curves.png")
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_comparison(report_csv: str, path: str) -> str:
    """Bar chart of suite means with seed-std whiskers."""
    names, means, stds = [], [], []
    with open(report_csv) as f:
        header = f.readline()
        for line in f:
            parts = line.rstrip("\n").split(",")
            if len(parts) < 5:
                continue
            names.append(parts[0])
            means.append(float(parts[3]))
            stds.append(float(parts[4]))
    if not names:
        raise ValueError(f"no rows in {report_csv}")
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names)), 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=3)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("top-1 accuracy")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
