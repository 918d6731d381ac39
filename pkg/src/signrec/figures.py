"""Matplotlib renderings written next to the delimited outputs.

The train command drops a training-curves panel beside metrics.csv; the
eval command drops a confusion-matrix heatmap and a per-class accuracy
chart beside the report JSON.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def training_curves(rows: list[dict], path) -> Path:
    """Loss components, schedules, and train accuracy over epochs."""
    path = Path(path)
    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    ax = axes[0, 0]
    ax.plot(epochs, [r["loss_total"] for r in rows], label="total")
    ax.plot(epochs, [r["loss_cls"] for r in rows], label="classification")
    ax.plot(epochs, [r["loss_imm"] for r in rows], label="gloss-mixup")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)

    ax = axes[0, 1]
    ax.plot(epochs, [r["lr"] for r in rows])
    ax.set_xlabel("epoch")
    ax.set_ylabel("learning rate")

    ax = axes[1, 0]
    ax.plot(epochs, [r["gamma"] for r in rows], label="gamma")
    ax.plot(epochs, [r["mu"] for r in rows], label="mu")
    ax.set_xlabel("epoch")
    ax.legend(fontsize=8)

    ax = axes[1, 1]
    ax.plot(epochs, [r["train_top1"] for r in rows])
    ax.set_xlabel("epoch")
    ax.set_ylabel("train top-1")
    ax.set_ylim(0, 1.02)

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def confusion_heatmap(report: dict, path) -> Path:
    path = Path(path)
    mat = np.asarray(report["confusion"], dtype=float)
    row_sums = mat.sum(axis=1, keepdims=True)
    norm = np.divide(mat, row_sums, out=np.zeros_like(mat), where=row_sums > 0)
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(norm, cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax, label="row-normalized count")
    glosses = report.get("glosses")
    n = mat.shape[0]
    if glosses and n <= 32:
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xticklabels(glosses, rotation=90, fontsize=6)
        ax.set_yticklabels(glosses, fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"{report['split']} confusion ({report['crops']}-crop)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def per_class_chart(report: dict, path) -> Path:
    path = Path(path)
    mat = np.asarray(report["confusion"], dtype=float)
    totals = mat.sum(axis=1)
    correct = np.diag(mat)
    acc = np.divide(correct, totals, out=np.zeros_like(correct), where=totals > 0)
    n = len(acc)
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * n), 4))
    ax.bar(range(n), acc, color="#4878a8")
    glosses = report.get("glosses")
    if glosses and n <= 48:
        ax.set_xticks(range(n))
        ax.set_xticklabels(glosses, rotation=90, fontsize=7)
    ax.axhline(
        report["per_class_topk"]["1"], color="#a84848", lw=1, ls="--",
        label=f"per-class top-1 {report['per_class_topk']['1']:.3f}",
    )
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
