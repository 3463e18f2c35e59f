"""Figure rendering for report outputs (loss curves, confusion heatmaps,
class histograms). Uses the Agg backend so figures go straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import StatsReport
from .evaluate import ConfusionMatrix
from .losses import LossBreakdown


def plot_loss_trace(trace: list[LossBreakdown], path: str):
    """Per-component loss curves on a log scale."""
    steps = np.arange(len(trace))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in (
        ("confidence", [b.conf for b in trace]),
        ("classification", [b.cls for b in trace]),
        ("localization", [b.loc for b in trace]),
        ("box overlap", [b.giou for b in trace]),
        ("total", [b.total for b in trace]),
    ):
        ax.plot(steps, values, label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_confusion(matrix: ConfusionMatrix, class_names: list[str], path: str):
    """Heatmap with ground truth on rows, predictions on columns."""
    labels = list(class_names) + ["bg"]
    fig, ax = plt.subplots(figsize=(max(5, len(labels) * 0.22), max(4, len(labels) * 0.22)))
    im = ax.imshow(matrix.counts, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    tick_step = max(1, len(labels) // 40)
    ticks = np.arange(0, len(labels), tick_step)
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    ax.set_xticklabels([labels[t] for t in ticks], fontsize=6)
    ax.set_yticklabels([labels[t] for t in ticks], fontsize=6)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_class_counts(report: StatsReport, path: str):
    """Bar chart of object counts per class."""
    names = [c.name for c in report.classes]
    objects = [c.objects for c in report.classes]
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 0.25), 4))
    ax.bar(np.arange(len(names)), objects, color="steelblue")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, fontsize=6, rotation=90)
    ax.set_ylabel("objects")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
