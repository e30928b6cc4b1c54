"""Matplotlib report figures rendered next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def training_curves(epoch_rows: list[dict], path: str | Path) -> None:
    """Per-epoch mean losses: total, contrastive, diffusion."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if epoch_rows:
        epochs = [row["epoch"] for row in epoch_rows]
        for key, label in (("total", "total"), ("contrastive", "contrastive"),
                           ("diffusion", "diffusion")):
            values = [row.get(key) for row in epoch_rows]
            if any(v is not None for v in values):
                ax.plot(epochs, [v if v is not None else np.nan for v in values],
                        label=label)
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def retrieval_bars(recall_v2a: dict[int, float], recall_a2v: dict[int, float],
                   path: str | Path) -> None:
    ks = sorted(recall_v2a)
    x = np.arange(len(ks))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - width / 2, [recall_v2a[k] for k in ks], width, label="video to audio")
    ax.bar(x + width / 2, [recall_a2v[k] for k in ks], width, label="audio to video")
    ax.set_xticks(x, [f"R@{k}" for k in ks])
    ax.set_ylabel("recall (%)")
    ax.set_ylim(0, 100)
    ax.set_title("cross-modal retrieval")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def spectrogram_grid(real: np.ndarray, generated: np.ndarray, path: str | Path,
                     n_examples: int = 4) -> None:
    """Real vs generated spectrograms side by side, shared color scale."""
    n = min(n_examples, real.shape[0], generated.shape[0])
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
    vmin = min(real[:n].min(), generated[:n].min())
    vmax = max(real[:n].max(), generated[:n].max())
    for i in range(n):
        for row, (data, label) in enumerate(((real, "real"), (generated, "generated"))):
            ax = axes[row][i]
            ax.imshow(data[i].T, origin="lower", aspect="auto", vmin=vmin, vmax=vmax)
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_ylabel(label)
    fig.suptitle("audio spectrograms (time x frequency)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_chart(rows: list[dict], path: str | Path) -> None:
    """Grouped metric bars over ablation cells (missing metrics skipped)."""
    cells = [row for row in rows if row.get("kind") == "grid" and not row.get("error")]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    if cells:
        names = [row["cell"] for row in cells]
        x = np.arange(len(names))
        r1 = [row.get("r1_v2a") or 0.0 for row in cells]
        axes[0].bar(x, r1, color="tab:blue")
        axes[0].set_xticks(x, names, rotation=20)
        axes[0].set_ylabel("V->A R@1 (%)")
        axes[0].set_title("retrieval")
        width = 0.38
        fad = [row.get("fad") for row in cells]
        acc = [row.get("align_acc") for row in cells]
        axes[1].bar(x - width / 2, [v if v is not None else 0 for v in fad], width,
                    label="FAD", color="tab:orange")
        axes[1].bar(x + width / 2, [v if v is not None else 0 for v in acc], width,
                    label="align acc", color="tab:green")
        axes[1].set_xticks(x, names, rotation=20)
        axes[1].set_title("generation")
        axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_curve(rows: list[dict], x_key: str, y_keys: list[str], title: str,
                path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    valid = [row for row in rows if not row.get("error")]
    if valid:
        xs = [row[x_key] for row in valid]
        for key in y_keys:
            ys = [row.get(key) for row in valid]
            if any(v is not None for v in ys):
                ax.plot(xs, [v if v is not None else np.nan for v in ys],
                        marker="o", label=key)
        ax.legend()
    ax.set_xlabel(x_key)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
