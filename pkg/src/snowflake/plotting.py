"""Static report figures rendered with the Agg backend."""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
import numpy as np  # noqa: E402

# no version or date stamps, so re-runs write identical files
_META = {"Software": None}


def plot_loss(losses: Sequence[float], path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(losses):
        ax.plot(np.arange(len(losses)), losses, lw=1)
        if min(losses) > 0:
            ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_metrics(rows: Sequence[Mapping[str, float]], labels: Sequence[str], path) -> None:
    """One panel per metric, one bar per sample."""
    if not rows:
        return
    keys = list(rows[0])
    fig, axes = plt.subplots(1, len(keys), figsize=(2.6 * len(keys), 3.2), squeeze=False)
    x = np.arange(len(rows))
    for ax, key in zip(axes[0], keys):
        ax.bar(x, [r[key] for r in rows], color="tab:blue")
        ax.set_title(key)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_trace(seeds: np.ndarray, traces, path, max_edges: int = 4000) -> None:
    """Parent-to-child splitting paths, one colour per layer, projected onto the x-y plane."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(seeds[:, 0], seeds[:, 1], s=2, c="k", label="P0")
    colors = plt.cm.viridis(np.linspace(0, 0.9, max(len(traces), 1)))
    for tr, color in zip(traces, colors):
        step = max(1, len(tr.child_coords) // max_edges)
        p, c = tr.parent_coords[::step], tr.child_coords[::step]
        segments = np.stack([p[:, :2], c[:, :2]], axis=1)
        ax.add_collection(LineCollection(segments, colors=[color], linewidths=0.5))
        ax.scatter(c[:, 0], c[:, 1], s=1, color=color, label=f"P{tr.layer}")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7, markerscale=4)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
