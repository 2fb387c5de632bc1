"""Figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .losses import LossReport  # noqa: E402


def _column(rows, name):
    return np.array([float(r[name]) for r in rows])


def plot_run(rows, path) -> None:
    """Loss components on the left, accuracy and purity on the right."""
    if not rows:
        raise ValueError("no rows to plot")
    steps = _column(rows, "step")
    fig, (ax_loss, ax_eval) = plt.subplots(1, 2, figsize=(10, 4))
    for name in LossReport.COMPONENTS + ("total",):
        values = _column(rows, name)
        if np.any(values != 0):
            ax_loss.plot(steps, values, label=name, lw=2 if name == "total" else 1)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("weighted loss")
    ax_loss.legend(fontsize=7)
    for name in ("target_acc", "src_purity", "tgt_purity"):
        ax_eval.plot(steps, _column(rows, name), label=name)
    ax_eval.set_xlabel("step")
    ax_eval.set_ylim(-0.02, 1.02)
    ax_eval.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_histograms(histograms: dict, path) -> None:
    """One grouped bar chart per pool: latent-domain counts for each true domain."""
    fig, axes = plt.subplots(1, len(histograms), figsize=(5 * len(histograms), 3.5), squeeze=False)
    for ax, (title, hist) in zip(axes[0], histograms.items()):
        counts = hist.counts
        n_true, n_latent = counts.shape
        width = 0.8 / max(n_latent, 1)
        for j in range(n_latent):
            ax.bar(np.arange(n_true) + j * width, counts[:, j], width, label=f"latent {j}")
        ax.set_xticks(np.arange(n_true) + 0.4 - width / 2)
        ax.set_xticklabels([f"domain {i}" for i in range(n_true)])
        ax.set_title(title)
        ax.set_ylabel("samples")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
