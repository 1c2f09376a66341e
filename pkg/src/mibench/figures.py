"""Matplotlib renderers for the report path.

Figures are written next to the delimited output: a grouped per-subject
accuracy chart for every results table, and training-loss curves when the
runs carry per-epoch histories.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def accuracy_figure(table, path, chance=None):
    """Grouped bars of per-subject mean accuracy (std as error bars),
    plus the AVG group; one bar series per results column."""
    labels = [str(s) for s in table.subjects] + ["AVG"]
    x = np.arange(len(labels))
    n_cols = len(table.columns)
    width = 0.8 / max(n_cols, 1)

    fig, ax = plt.subplots(figsize=(max(6.0, 1.0 + 0.9 * len(labels)), 4.0))
    for ci, col in enumerate(table.columns):
        means = np.append(col.subject_mean(), col.avg_mean())
        stds = np.append(col.subject_std(), col.avg_std())
        offset = (ci - (n_cols - 1) / 2) * width
        label = col.label + (" *" if ci in table.stars else "")
        ax.bar(x + offset, means, width, yerr=stds, capsize=2, label=label)
    if chance is not None:
        ax.axhline(chance, color="gray", linestyle="--", linewidth=1,
                   label=f"chance ({chance:.0f}%)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel("subject")
    ax.set_ylabel("accuracy [%]")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def loss_figure(runs, path):
    """Training-loss curves: one light line per (fold, rep), mean in bold.

    Returns None without writing when no run carries a loss history.
    """
    histories = [r.detail["losses"] for r in runs
                 if r.detail.get("losses")]
    if not histories:
        return None
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for losses in histories:
        ax.plot(losses, color="steelblue", alpha=0.25, linewidth=0.8)
    shortest = min(len(h) for h in histories)
    mean = np.mean([h[:shortest] for h in histories], axis=0)
    ax.plot(mean, color="midnightblue", linewidth=2.0, label="mean")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
