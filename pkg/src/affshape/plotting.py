"""SVG figures for experiment outputs.

Figures are written with a fixed hash salt and no date stamp so that equal
inputs give byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "affshape"
plt.rcParams["svg.fonttype"] = "none"

_METRICS = (("loss", "loss"), ("E", "geometric error E"),
            ("collapsed_frac", "collapsed fraction"), ("match_score", "matching score"))


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_trajectory(traj, path, title: str = "") -> None:
    """One panel per recorded metric against the optimization step."""
    steps = traj.column("step")
    fig, axes = plt.subplots(1, len(_METRICS), figsize=(14, 3.2))
    for ax, (key, label) in zip(axes, _METRICS):
        ax.plot(steps, traj.column(key), lw=1.5, label=label)
        ax.set_xlabel("step")
        ax.set_title(label, fontsize=10)
        ax.grid(alpha=0.3)
    axes[2].set_ylim(-0.02, 1.02)
    axes[3].set_ylim(-0.02, 1.02)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    _save(fig, path)


def plot_toy(result, path, title: str = "") -> None:
    """Point paths of the toy experiment: circles start, filled markers end."""
    pos = result.positions
    if pos.shape[-1] != 2:
        raise ValueError("toy plots need 2-D points")
    n = pos.shape[2]
    colors = plt.get_cmap("tab10")(np.arange(n) % 10)
    fig, ax = plt.subplots(figsize=(5, 5))
    for i in range(n):
        for side, marker in ((0, "o"), (1, "s")):
            path_i = pos[:, side, i]
            ax.plot(path_i[:, 0], path_i[:, 1], color=colors[i], lw=0.8, alpha=0.6)
            ax.plot(*path_i[0], marker=marker, mfc="none", color=colors[i], ms=7)
            ax.plot(*path_i[-1], marker=marker, color=colors[i], ms=6)
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.set_title(title or "toy experiment", fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def plot_repeatability(labels, values, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(max(3.0, 0.8 * len(values) + 1.5), 3.2))
    x = np.arange(len(values))
    ax.bar(x, values, color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels([str(v) for v in labels])
    ax.set_ylim(0, 1)
    ax.set_xlabel("image pair")
    ax.set_ylabel("repeatability")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
