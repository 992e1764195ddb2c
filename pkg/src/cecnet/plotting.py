"""Figure output for the CLI report path. Everything renders to files through Agg."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {key: np.array([float(r[key]) for r in rows]) for key in rows[0]}


def loss_curve(metrics_path, out_path, smooth: int = 50) -> None:
    """Total and per-task losses against step, with a moving average when long enough."""
    data = read_metrics(metrics_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    if data:
        steps = data["step"]
        for key in ("loss_total", "loss_M", "loss_G", "loss_R"):
            values = data[key]
            if len(values) >= smooth > 1:
                values = np.convolve(values, np.ones(smooth) / smooth, mode="valid")
                x = steps[smooth - 1:]
            else:
                x = steps
            ax.plot(x, values, label=key)
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("base training")
    fig.tight_layout()
    _save(fig, out_path)


def ablation_bars(rows: list[dict], out_path) -> None:
    """One bar per (attention, metric) cell with its 95% interval."""
    labels = [f"{r['attn']}+{r['metric']}" for r in rows]
    accs = np.array([float(r["acc"]) for r in rows])
    cis = np.array([float(r["ci95"]) for r in rows])
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(rows)), 4))
    ax.bar(np.arange(len(rows)), accs, yerr=cis, capsize=2, color="tab:blue")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("accuracy (%)")
    if len(accs):
        ax.set_ylim(max(0.0, accs.min() - 5), min(100.0, accs.max() + 5))
    fig.tight_layout()
    _save(fig, out_path)


def relation_figure(image: np.ndarray, mask: np.ndarray, relation: np.ndarray, out_path) -> None:
    """Query image, its object mask and the 5x5 relation map side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(9, 3))
    axes[0].imshow(np.transpose(image, (1, 2, 0)))
    axes[0].set_title("query")
    axes[1].imshow(mask, cmap="gray", vmin=0, vmax=1)
    axes[1].set_title("object mask")
    shown = axes[2].imshow(relation, cmap="viridis", vmin=-1, vmax=1)
    axes[2].set_title("relation map")
    fig.colorbar(shown, ax=axes[2], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, out_path)
