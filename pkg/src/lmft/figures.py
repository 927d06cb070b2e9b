"""Figure rendering for training logs and evaluation reports.

Uses the Agg backend so rendering works headless; every function
writes a PNG file and returns its path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _val_series(log: dict) -> tuple[str, list[float]]:
    entries = log.get("epochs", [])
    for key, label in (("val_perplexity", "validation perplexity"),
                       ("val_pos_f1", "validation positive-class F1"),
                       ("val_ndcg5", "validation nDCG@5")):
        if entries and key in entries[0]:
            return label, [e[key] for e in entries]
    return "validation metric", [e.get("val_metric", 0.0) for e in entries]


def plot_training_curves(log: dict, out_path) -> str:
    """Train loss and the validation metric, one panel each."""
    entries = log.get("epochs", [])
    epochs = [e["epoch"] for e in entries]
    losses = [e["train_loss"] for e in entries]
    val_label, vals = _val_series(log)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, losses, marker="o", color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.set_title(log.get("stage", "training"))
    ax1.grid(True, alpha=0.3)

    ax2.plot(epochs, vals, marker="o", color="tab:orange")
    if "untrained_val_perplexity" in log and "perplexity" in val_label:
        ax2.axhline(log["untrained_val_perplexity"], color="gray",
                    linestyle="--", linewidth=1, label="before training")
        ax2.legend()
    ax2.set_xlabel("epoch")
    ax2.set_ylabel(val_label)
    ax2.grid(True, alpha=0.3)

    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def plot_metric_report(metrics: dict[str, float], out_path,
                       title: str = "evaluation") -> str:
    """Horizontal bar chart of named metric values."""
    names = list(metrics)
    values = [metrics[n] for n in names]

    fig, ax = plt.subplots(figsize=(7, 1.2 + 0.6 * len(names)))
    ax.barh(range(len(names)), values, color="tab:green")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("value")
    ax.set_title(title)
    for i, v in enumerate(values):
        ax.text(v, i, f" {v:.4f}", va="center")
    ax.grid(True, axis="x", alpha=0.3)

    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
