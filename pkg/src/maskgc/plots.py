"""SVG figures: adjacency heatmaps, ROC/PR curves, loss curves, cost scaling."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import pr_curve, roc_curve  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


def adjacency_heatmap(truth, scores, path, title: str = "") -> Path:
    """Ground truth next to the learned adjacency, rows = targets, columns = sources."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, mat, name in zip(axes, (truth, scores), ("ground truth", "learned")):
        im = ax.imshow(np.asarray(mat, dtype=float), vmin=0.0, vmax=1.0, cmap="Blues")
        ax.set_title(name)
        ax.set_xlabel("source j")
        ax.set_ylabel("target i")
    fig.colorbar(im, ax=axes, shrink=0.8)
    if title:
        fig.suptitle(title)
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


def roc_pr_curves(scores, truth, path, diagonal_policy: str = "include") -> Path:
    _, fpr, tpr = roc_curve(scores, truth, diagonal_policy)
    _, prec, rec = pr_curve(scores, truth, diagonal_policy)
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 4))
    a.step(fpr, tpr, where="post")
    a.plot([0, 1], [0, 1], ls=":", c="grey")
    a.set(xlabel="false positive rate", ylabel="true positive rate", title="ROC")
    b.step(np.r_[0.0, rec], np.r_[prec[0], prec], where="pre")
    b.set(xlabel="recall", ylabel="precision", title="precision-recall", ylim=(0, 1.05))
    return _save(fig, path)


def loss_curves(history: dict[str, list[float]], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in history.items():
        ax.plot(np.arange(1, len(values) + 1), values, label=name)
    ax.set(xlabel="epoch", ylabel="loss", yscale="log")
    ax.legend()
    return _save(fig, path)


def scaling_plot(rows: list[dict], x_key: str, path, fixed: str = "") -> Path:
    """Params and FLOPs against one swept axis (log-log)."""
    xs = np.array([r[x_key] for r in rows], dtype=float)
    order = np.argsort(xs)
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("params", "flops"):
        ax.plot(xs[order], np.array([r[key] for r in rows], dtype=float)[order], marker="o", label=key)
    ax.set(xscale="log", yscale="log", xlabel=x_key, ylabel="count", title=fixed)
    ax.legend()
    return _save(fig, path)
