"""Report figures: latency percentiles, per-image MSE histograms, loss curves.

Figures are drawn on standalone ``Figure`` objects (Agg canvas), so nothing
here touches pyplot state or needs a display.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .evaluation import PERCENTILES, BenchStats, EvalReport

FIG_SIZE = (6.0, 3.7)  # inches, roughly golden


def _finish(fig: Figure, ax, path) -> Path:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    return path


def plot_latency(stats: Sequence[tuple[str, BenchStats]], path) -> Path:
    """Percentile profile per method, with the average as a dashed line."""
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot(1, 1, 1)
    x = np.arange(len(PERCENTILES))
    for method, s in stats:
        line, = ax.plot(x, [s.percentiles[p] for p in PERCENTILES], marker="o", label=method)
        ax.axhline(s.average, color=line.get_color(), linestyle="--", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels([f"p{p:02d}" for p in PERCENTILES])
    ax.set_ylabel("latency (ms)")
    ax.legend(frameon=False)
    return _finish(fig, ax, path)


def plot_mse_histogram(reports: Sequence[tuple[str, EvalReport]], path, bins: int = 40) -> Path:
    """Per-image MSE distributions on a log axis; zeros are drawn at the floor."""
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot(1, 1, 1)
    vals = [np.asarray(r.per_image) for _, r in reports]
    pos = np.concatenate([v[v > 0] for v in vals]) if vals else np.array([])
    lo = pos.min() if pos.size else 1e-8
    hi = max(pos.max() if pos.size else lo * 10, lo * 10)
    edges = np.geomspace(lo / 2, hi * 2, bins + 1)
    for (method, rep), v in zip(reports, vals):
        ax.hist(np.maximum(v, edges[0]), bins=edges, histtype="step", label=f"{method} (avg {rep.average:.2e})")
    ax.axvline(1e-3, color="0.5", linestyle=":", linewidth=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("per-image MSE")
    ax.set_ylabel("images")
    ax.legend(frameon=False)
    return _finish(fig, ax, path)


def plot_loss_curve(history, path) -> Path:
    """Train/validation MSE per epoch (``EpochRecord`` sequence) on a log axis."""
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot(1, 1, 1)
    epochs = [r.epoch for r in history]
    ax.plot(epochs, [r.train_mse for r in history], label="train")
    val = [r.val_mse for r in history]
    if not all(np.isnan(val)):
        ax.plot(epochs, val, label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.legend(frameon=False)
    return _finish(fig, ax, path)
