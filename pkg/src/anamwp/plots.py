"""Report figures rendered to files; uses the Agg backend only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["plot_training_curves", "plot_bucket_accuracy", "plot_embeddings"]


def plot_training_curves(report, path) -> None:
    """Loss components and dev accuracy over epochs, one PNG."""
    epochs = [e["epoch"] for e in report.epochs]
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in (("l_seq", "sequence"), ("l_a", "analogy"),
                       ("l_s", "guidance"), ("l_disc", "discriminator")):
        series = [e[key] for e in report.epochs]
        if any(v != 0.0 for v in series):
            ax_l.plot(epochs, series, label=label)
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.legend()
    ax_l.set_title("training losses")
    ax_a.plot(epochs, [e["dev_acc"] for e in report.epochs], color="tab:green")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("dev value accuracy")
    ax_a.set_ylim(0.0, 1.0)
    ax_a.set_title("dev accuracy (best: epoch %d, %.3f)"
                   % (report.best_epoch, report.best_dev_accuracy))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bucket_accuracy(buckets: dict, path, title: str = "accuracy by operator count") -> None:
    """Bar chart of per-bucket accuracy; bucket keys are operator counts."""
    keys = sorted(buckets, key=lambda k: int(k))
    accs = [buckets[k]["accuracy"] for k in keys]
    counts = [buckets[k]["count"] for k in keys]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar([str(k) for k in keys], accs, color="tab:blue")
    for bar, c in zip(bars, counts):
        ax.annotate(f"n={c}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("operators in gold equation")
    ax.set_ylabel("value accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_embeddings(rows: list, path) -> None:
    """2D scatter of problem vectors, colored by root operator.

    Projects with PCA (top two components of the centered matrix) so the
    figure needs nothing beyond numpy.
    """
    import numpy as np

    vecs = np.array([r["problem_vec"] for r in rows])
    labels = [r["root_operator"] for r in rows]
    centered = vecs - vecs.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    xy = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(5, 5))
    for op in sorted(set(labels), key=str):
        idx = [i for i, l in enumerate(labels) if l == op]
        ax.scatter(xy[idx, 0], xy[idx, 1], s=12, label=str(op))
    ax.legend(title="root operator")
    ax.set_title("problem vectors (PCA)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
