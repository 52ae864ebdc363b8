"""Figure rendering for run and comparison reports.

Figures are written next to the delimited output inside the run directory;
the Agg backend keeps rendering headless and deterministic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SCHEME_COLORS = {"splitllm": "#1f77b4", "fl": "#d62728", "sl": "#2ca02c"}


def _scheme_color(scheme: str) -> str:
    return _SCHEME_COLORS.get(scheme, "#7f7f7f")


def training_curves(rounds, path) -> None:
    """Two-panel training loss / test accuracy vs round."""
    xs = [r.round for r in rounds]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(xs, [r.loss for r in rounds], color="#1f77b4")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("training loss")
    ax_loss.grid(alpha=0.3)
    ax_acc.plot(xs, [r.acc for r in rounds], color="#2ca02c")
    ax_acc.set_xlabel("round")
    ax_acc.set_ylabel("test accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def link_traffic(rounds, path) -> None:
    """Cumulative bytes transmitted by each tier vs round."""
    xs = [r.round for r in rounds]
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for field, label in (("user_bytes", "user tier"),
                         ("edge_bytes", "edge tier"),
                         ("cloud_bytes", "cloud tier")):
        ax.plot(xs, [getattr(r, field) for r in rounds], label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative bytes transmitted")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def comparison_memory(rows, path) -> None:
    """Grouped bars: analytical per-tier memory for each scheme."""
    tiers = ("mem_user", "mem_edge", "mem_cloud")
    labels = ("user", "edge", "cloud")
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    for i, row in enumerate(rows):
        offsets = [t + i * width for t in range(len(tiers))]
        ax.bar(offsets, [row[f] / 1024.0 for f in tiers], width=width,
               label=row["scheme"], color=_scheme_color(row["scheme"]))
    ax.set_xticks([t + width * (len(rows) - 1) / 2 for t in range(len(tiers))])
    ax.set_xticklabels(labels)
    ax.set_ylabel("estimated peak memory (KiB)")
    ax.grid(alpha=0.3, axis="y")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def comparison_accuracy(rows, path) -> None:
    """Grouped bars: best accuracy per scheme under IID and non-IID."""
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for i, row in enumerate(rows):
        offsets = [t + i * width for t in range(2)]
        ax.bar(offsets, [row["acc_iid"], row["acc_noniid"]], width=width,
               label=row["scheme"], color=_scheme_color(row["scheme"]))
    ax.set_xticks([t + width * (len(rows) - 1) / 2 for t in range(2)])
    ax.set_xticklabels(["IID", "Dirichlet"])
    ax.set_ylabel("best test accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3, axis="y")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
