"""Figure rendering for run artifacts: loss curves next to loss.csv, and the
final Jacobian-deviation histogram."""

from __future__ import annotations

import numpy as np

from .metrics import jacobian_deviation


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_loss_figure(breakdowns, path):
    plt = _plt()
    it = np.arange(len(breakdowns))
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(it, [b.semantic for b in breakdowns], label="semantic")
    ax.plot(it, [b.view_consistency for b in breakdowns], label="view consistency")
    ax.plot(it, [b.identity_reg for b in breakdowns], label="identity reg")
    ax.plot(it, [b.total for b in breakdowns], label="total", color="k", lw=1.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_deviation_figure(system, vertices, path, bins: int = 32):
    plt = _plt()
    summary = jacobian_deviation(system, vertices, bins=bins)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    widths = np.diff(summary.hist_edges)
    ax.bar(summary.hist_edges[:-1], summary.hist_counts, width=widths,
           align="edge", color="#4878d0")
    ax.set_xlabel("per-face deviation from identity map (Frobenius)")
    ax.set_ylabel("faces")
    ax.set_title(f"mean {summary.mean:.4g}, max {summary.max:.4g}")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return summary
