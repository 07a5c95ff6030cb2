"""Matplotlib renderings of the evaluation curves and feature histograms."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}
DPI = 100


def _new(width=5.0, height=4.0):
    fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata=_PNG_META)
    plt.close(fig)


def plot_roc(series, auc, path):
    fig, ax = _new()
    xs = [p[0] for p in series.points]
    ys = [p[1] for p in series.points]
    ax.plot(xs, ys, color="tab:blue", lw=2, label=f"forest (AUC = {auc:.3f})")
    ax.plot([0, 1], [0, 1], color="0.6", ls="--", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC curve")
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_pr(series, path):
    fig, ax = _new()
    ax.plot([p[0] for p in series.points], [p[1] for p in series.points], color="tab:blue", lw=2)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title("Precision vs. recall")
    _save(fig, path)


def plot_pr_vs_threshold(series, path):
    # drop the sentinel above 1 so the x axis stays on [0, 1]
    pts = [p for p in series.points if p[2] <= 1.0]
    thr = [p[2] for p in pts]
    fig, ax = _new()
    ax.plot(thr, [p[0] for p in pts], color="tab:blue", ls=":", lw=2, label="precision")
    ax.plot(thr, [p[1] for p in pts], color="tab:green", ls="-", lw=2, label="recall")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Threshold")
    ax.legend(loc="lower left")
    ax.set_title("Precision and recall vs. threshold")
    _save(fig, path)


def plot_histograms(table, path):
    """One panel per feature, infected and uninfected side by side."""
    names = table.feature_names
    fig, axes = plt.subplots(len(names), 2, figsize=(8, 2.2 * len(names)), squeeze=False)
    for j, name in enumerate(names):
        edges = table.edges[j]
        widths = [b - a for a, b in zip(edges[:-1], edges[1:])]
        for col, label in enumerate(("infected", "uninfected")):
            ax = axes[j][col]
            color = "tab:red" if label == "infected" else "tab:green"
            ax.bar(edges[:-1], table.counts[(label, name)], width=widths, align="edge", color=color, edgecolor="k", lw=0.3)
            ax.set_title(f"{name} ({label})", fontsize=9)
            ax.tick_params(labelsize=7)
    _save(fig, path)
