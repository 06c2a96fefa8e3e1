"""Figures written next to the training and benchmark reports."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def new_figure(width=6.5, nrows=1, ncols=1, height=None):
    fig = Figure(figsize=(width, height or width * GOLDEN))
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    for ax in axes.flat:
        ax.tick_params(labelsize=RC["xtick.labelsize"])
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    return fig, axes


def save(fig, path):
    fig.tight_layout()
    # no timestamp metadata, so reruns produce identical files
    fig.savefig(path, dpi=120, metadata={"Software": None})


def plot_search_trace(records, path, title=None):
    """Temperature, candidate posterior and tree size per search iteration.

    ``records`` are iteration records (objects or dicts).
    """
    recs = [r if isinstance(r, dict) else vars(r) for r in records]
    it = np.array([r["iteration"] for r in recs])
    post = np.array([r["posterior"] for r in recs])
    labels = [r["candidates"] for r in recs]

    fig, axes = new_figure(width=6.5, nrows=3, ncols=1, height=7.0)
    ax = axes[0, 0]
    ax.plot(it, [r["tau"] for r in recs], "o-", color="k", ms=3)
    ax.set_ylabel("temperature")
    if title:
        ax.set_title(title, fontsize=RC["font.size"])

    ax = axes[1, 0]
    bottom = np.zeros(len(it))
    names = ["pruned", "base", "grafted"]
    colors = ["#d95f02", "#7570b3", "#1b9e77"]
    for j in range(post.shape[1]):
        kinds = {lab[j].split("(")[0].split(" ")[0] for lab in labels}
        name = kinds.pop() if len(kinds) == 1 else f"slot {j}"
        color = colors[names.index(name)] if name in names else None
        ax.bar(it, post[:, j], bottom=bottom, label=name, color=color, width=0.8)
        bottom += post[:, j]
    chosen = [r["chosen"] for r in recs]
    ax.scatter(it, [post[i, :c].sum() + post[i, c] / 2 for i, c in enumerate(chosen)],
               marker="x", color="k", s=14, zorder=3, label="sampled")
    ax.set_ylim(0, 1)
    ax.set_ylabel("posterior")
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0), frameon=False)

    ax = axes[2, 0]
    ax.plot(it, [r["train_loss"] for r in recs], "o-", ms=3, label="train")
    if all(r["test_loss"] is not None for r in recs):
        ax.plot(it, [r["test_loss"] for r in recs], "s--", ms=3, label="test")
    ax2 = ax.twinx()
    ax2.step(it, [r["n_leaves"] for r in recs], where="mid", color="0.5", lw=1)
    ax2.set_ylabel("leaves", color="0.4")
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-loss")
    ax.legend(frameon=False)
    save(fig, path)
    return path


def plot_improvements(rows, kinds, path, split="test"):
    """Grouped bars of per-dataset relative improvement for each model kind.

    ``rows`` are per-dataset dicts holding ``improvement[kind][split]``.
    """
    names = [r["dataset"] for r in rows]
    x = np.arange(len(names))
    width = 0.8 / max(len(kinds), 1)
    fig, axes = new_figure(width=max(4.0, 1.2 * len(names) + 2.5))
    ax = axes[0, 0]
    for i, kind in enumerate(kinds):
        vals = [r["improvement"][kind][split] for r in rows]
        ax.bar(x + (i - (len(kinds) - 1) / 2) * width, vals, width, label=kind)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel(f"log-loss improvement over baseline, {split} (%)")
    ax.legend(frameon=False, fontsize=RC["legend.fontsize"])
    save(fig, path)
    return path
