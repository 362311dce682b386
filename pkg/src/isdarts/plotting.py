"""Optional PNG figures for the CLI report commands (headless matplotlib)."""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def importance_heatmap(steps: Sequence[int], labels: Sequence[str], matrix, path: str) -> str:
    """Step x candidate importance matrix; discarded candidates (NaN) stay blank."""
    m = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(labels) + 2), max(2.5, 0.4 * len(steps) + 1.5)))
    im = ax.imshow(np.ma.masked_invalid(m), aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(steps)))
    ax.set_yticklabels([str(s) for s in steps])
    ax.set_xlabel("candidate")
    ax.set_ylabel("shrink step")
    fig.colorbar(im, ax=ax, label="importance")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def swap_curves(curves: dict, path: str, chance: Optional[float] = None) -> str:
    """Oracle accuracy after each swap, one line per method."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for name, accs in curves.items():
        ax.plot(range(len(accs)), accs, marker="o", label=name)
    if chance is not None:
        ax.axhline(chance, color="grey", linestyle=":", linewidth=1)
    ax.set_xlabel("swaps")
    ax.set_ylabel("oracle accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def alpha_trajectories(rows, path: str) -> str:
    """softmax(alpha) per candidate over epochs, one panel per subset."""
    subsets = sorted({r[1] for r in rows})
    fig, axes = plt.subplots(1, len(subsets), figsize=(3.2 * len(subsets), 2.8), squeeze=False)
    for ax, h in zip(axes[0], subsets):
        series: dict = {}
        for step, hh, label, _, p in rows:
            if hh == h:
                series.setdefault(label, []).append((step, p))
        for label, pts in series.items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=label)
        ax.set_title(f"subset {h}", fontsize=9)
        ax.set_xlabel("epoch")
        ax.legend(fontsize=6)
    axes[0][0].set_ylabel("softmax weight")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
