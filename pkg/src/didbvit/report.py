"""Figures written next to the text output of the CLI (PNG, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(report, path) -> Path:
    """Loss per step and test accuracy per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2)
        ax1.plot(report.step_losses, lw=0.8, color="tab:blue")
        ax1.set(xlabel="step", ylabel="loss", title="training loss")
        epochs = [e.epoch for e in report.epochs]
        ax2.plot(epochs, [e.test_acc for e in report.epochs], marker="o", ms=3, label="test")
        ax2.plot(epochs, [e.train_acc for e in report.epochs], marker="s", ms=3, label="train")
        ax2.set(xlabel="epoch", ylabel="top-1", title="accuracy")
        ax2.legend()
        return _save(fig, path)


def ablation_bars(rows, path) -> Path:
    """Mean accuracy per ladder variant with per-seed points."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = range(len(rows))
        ax.bar(xs, [r.mean for r in rows], yerr=[r.std for r in rows], color="tab:gray", alpha=0.7,
               capsize=3)
        for i, r in enumerate(rows):
            ax.scatter([i] * len(r.accuracies), r.accuracies, s=10, color="black", zorder=3)
        ax.set_xticks(list(xs), [r.name for r in rows])
        lo = min(min(r.accuracies) for r in rows)
        ax.set_ylim(max(0.0, lo - 0.05), None)
        ax.set(ylabel="top-1 (test)", title="ablation ladder")
        return _save(fig, path)


def bench_bars(results: dict[str, float], path) -> Path:
    """Throughput per GEMM implementation, in GOP/s."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(results)
        ax.barh(names, [results[n] for n in names], color="tab:blue")
        ax.set(xlabel="GOP/s", title="GEMM throughput")
        ax.set_xscale("log")
        return _save(fig, path)
