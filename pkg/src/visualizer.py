import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from src.metrics import TRACE_COLUMNS, TrainingTrace


def _as_frame(trace, deployment="run"):
    if isinstance(trace, TrainingTrace):
        return trace.to_frame(deployment)
    missing = set(TRACE_COLUMNS) - set(trace.columns)
    if missing:
        raise ValueError(f"trace frame is missing columns {sorted(missing)}")
    return trace


def plot_loss_curves(trace, title="Training vs. Validation Loss", path=None, show=False,
                     convergence=None):
    """
    One subplot per client: training loss (solid) and validation loss (dashed)
    against the client's epoch counter. ``trace`` is a TrainingTrace or a frame
    read back from a traces/<deployment>.csv file. ``convergence`` maps client
    id to the detected epoch (None for NC) and draws it as a vertical marker.
    """
    frame = _as_frame(trace)
    clients = sorted(frame["client"].unique())
    if not clients:
        raise ValueError("trace is empty")

    fig, axes = plt.subplots(1, len(clients), figsize=(4 * len(clients), 4), sharey=True, squeeze=False)
    fig.suptitle(title, fontsize=16)

    for ax, client in zip(axes[0], clients):
        rows = frame[frame["client"] == client].sort_values("epoch")
        ax.plot(rows["epoch"], rows["train_loss"], label='train', color='blue', linewidth=2)
        ax.plot(rows["epoch"], rows["val_loss"], label='validation', color='red', linewidth=2, linestyle='--')

        # Round boundaries for multi-round deployments
        starts = rows.groupby("round")["epoch"].min().to_numpy()
        for start in starts[1:]:
            ax.axvline(start, color='gray', alpha=0.3)

        if convergence is not None and convergence.get(int(client)) is not None:
            ax.axvline(convergence[int(client)], color='green', linestyle=':', label='converged')

        ax.set_xlabel('Epoch')
        ax.set_title(f'Client {client}')
        ax.grid(True, linestyle='--', alpha=0.6)
        ax.legend()
    axes[0][0].set_ylabel('Loss')

    plt.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=150)
    if show:
        plt.show()
    return fig


def plot_f1_by_level(summary, title="Test F1 by Non-IID Level", path=None, show=False):
    """
    Grouped bars: one group per non-IID level, one bar per deployment.
    ``summary`` needs the columns level, deployment and f1.
    """
    summary = pd.DataFrame(summary)
    missing = {"level", "deployment", "f1"} - set(summary.columns)
    if missing:
        raise ValueError(f"summary is missing columns {sorted(missing)}")

    levels = list(dict.fromkeys(summary["level"]))
    deployments = list(dict.fromkeys(summary["deployment"]))
    table = summary.pivot_table(index="level", columns="deployment", values="f1").reindex(
        index=levels, columns=deployments)

    x = np.arange(len(levels))
    width = 0.8 / max(len(deployments), 1)
    fig, ax = plt.subplots(figsize=(12, 6))
    fig.suptitle(title, fontsize=16)
    for i, name in enumerate(deployments):
        ax.bar(x + i * width - 0.4 + width / 2, table[name].to_numpy(), width, label=name)

    ax.set_xticks(x)
    ax.set_xticklabels(levels)
    ax.set_xlabel('Non-IID level')
    ax.set_ylabel('F1')
    ax.set_ylim(0, 1.05)
    ax.grid(True, axis='y', linestyle='--', alpha=0.6)
    ax.legend(fontsize=8)

    plt.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=150)
    if show:
        plt.show()
    return fig
