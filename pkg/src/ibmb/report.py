"""Diff-friendly key=value reports and the figures rendered alongside them."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .batchgen import Batch
from .graph import CsrGraph

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 3.6),
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "savefig.dpi": 150,
    }
)


def format_value(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_report(
    path: str | Path, records: Sequence[tuple[str, object]], summary: Sequence[tuple[str, object]]
) -> None:
    """Line-oriented ``key=value`` records followed by a summary block."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in records:
            f.write(f"{key}={format_value(value)}\n")
        f.write("# summary\n")
        for key, value in summary:
            f.write(f"{key}={format_value(value)}\n")


def read_report(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    records: dict[str, str] = {}
    summary: dict[str, str] = {}
    target = records
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line == "# summary":
                target = summary
                continue
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            target[key] = value
    return records, summary


# --------------------------------------------------------------------------
# Figures
# --------------------------------------------------------------------------


def fig_batch_sizes(batches: Sequence[Batch], path: str | Path) -> None:
    """Grouped bars of total and output node counts per batch."""
    ids = np.arange(len(batches))
    totals = [b.num_nodes for b in batches]
    outputs = [int(b.output_mask.size) for b in batches]
    fig, ax = plt.subplots()
    ax.bar(ids - 0.2, totals, width=0.4, label="nodes")
    ax.bar(ids + 0.2, outputs, width=0.4, label="outputs")
    ax.set_xlabel("batch")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def fig_training_curves(trace: Sequence[dict], path: str | Path) -> None:
    epochs = [r["epoch"] for r in trace]
    losses = [r["loss"] for r in trace]
    fig, ax = plt.subplots()
    ax.plot(epochs, losses, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if any("val_acc" in r for r in trace):
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.get("val_acc", np.nan) for r in trace], color="C1", label="val acc")
        ax2.set_ylabel("accuracy")
        ax2.grid(False)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def fig_degree_hist(g: CsrGraph, path: str | Path) -> None:
    deg = g.degrees
    fig, ax = plt.subplots()
    ax.hist(deg, bins=min(50, max(int(deg.max()) if deg.size else 1, 1)))
    ax.set_xlabel("degree")
    ax.set_ylabel("nodes")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
