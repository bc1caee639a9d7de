"""Graph-recovery metrics: AUROC, AUPRC, thresholding, SHD, precision/recall/F1."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class DegenerateLabelsError(ValueError):
    pass


def candidate_mask(n: int, diagonal_policy: str = "include") -> np.ndarray:
    if diagonal_policy == "include":
        return np.ones((n, n), dtype=bool)
    if diagonal_policy == "exclude":
        return ~np.eye(n, dtype=bool)
    raise ValueError(f"diagonal_policy must be 'include' or 'exclude', got {diagonal_policy!r}")


def edge_pairs(scores, truth, diagonal_policy: str = "include") -> tuple[np.ndarray, np.ndarray]:
    """Flattened (score, label) pairs over candidate positions, row-major."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} must be equal square shapes")
    keep = candidate_mask(scores.shape[0], diagonal_policy)
    return scores[keep], truth[keep].astype(np.int64)


def _check_labels(labels: np.ndarray) -> tuple[int, int]:
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabelsError("need at least one positive and one negative edge label")
    return pos, neg


def auroc(scores, truth, diagonal_policy: str = "include") -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    s, y = edge_pairs(scores, truth, diagonal_policy)
    pos, neg = _check_labels(y)
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


def pr_curve(scores, truth, diagonal_policy: str = "include"):
    """Precision/recall at each distinct score, from the highest threshold down."""
    s, y = edge_pairs(scores, truth, diagonal_policy)
    pos, _ = _check_labels(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], tp / (tp + fp), tp / pos


def auprc(scores, truth, diagonal_policy: str = "include") -> float:
    """Average precision: sum over thresholds of (recall step) * precision."""
    _, precision, recall = pr_curve(scores, truth, diagonal_policy)
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def roc_curve(scores, truth, diagonal_policy: str = "include"):
    s, y = edge_pairs(scores, truth, diagonal_policy)
    pos, neg = _check_labels(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], np.r_[0.0, fp / neg], np.r_[0.0, tp / pos]


# -- thresholding -----------------------------------------------------------------

def threshold_density(scores, target_density: float, diagonal_policy: str = "include") -> np.ndarray:
    """Keep the top ceil(density * candidates) edges; ties go to the earlier (row, col)."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < target_density <= 1.0:
        raise ValueError("target_density must be in (0, 1]")
    n = scores.shape[0]
    keep = candidate_mask(n, diagonal_policy)
    flat = np.flatnonzero(keep.reshape(-1))
    k = int(math.ceil(target_density * flat.size - 1e-9))
    # stable sort on -score keeps row-major order inside tie blocks
    order = flat[np.argsort(-scores.reshape(-1)[flat], kind="mergesort")]
    out = np.zeros(n * n, dtype=np.int64)
    out[order[:k]] = 1
    return out.reshape(n, n)


def truth_density(truth, diagonal_policy: str = "include") -> float:
    truth = np.asarray(truth)
    keep = candidate_mask(truth.shape[0], diagonal_policy)
    return float(truth[keep].mean())


def two_means_1d(values: np.ndarray, max_iter: int = 1000) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        raise ValueError("all scores are identical; cannot cluster")
    for _ in range(max_iter):
        cut = 0.5 * (lo + hi)
        upper = v > cut
        new_lo, new_hi = float(v[~upper].mean()), float(v[upper].mean())
        if new_lo == lo and new_hi == hi:
            break
        lo, hi = new_lo, new_hi
    return lo, hi


def threshold_cluster(scores, diagonal_policy: str = "include") -> tuple[np.ndarray, float]:
    """2-means on the off-diagonal scores; edges above the centroid midpoint are kept.

    The diagonal is never used to place the cut.  Under ``include`` it is
    thresholded with the same cut.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    off = ~np.eye(n, dtype=bool)
    lo, hi = two_means_1d(scores[off])
    cut = 0.5 * (lo + hi)
    graph = (scores > cut).astype(np.int64)
    graph[~candidate_mask(n, diagonal_policy)] = 0
    return graph, cut


# -- discrete metrics ----------------------------------------------------------------

def discrete_metrics(pred, truth, diagonal_policy: str = "include") -> dict[str, float]:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: predicted {pred.shape} vs truth {truth.shape}")
    keep = candidate_mask(truth.shape[0], diagonal_policy)
    p, t = pred[keep].astype(bool), truth[keep].astype(bool)
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"shd": fp + fn, "tp": tp, "fp": fp, "fn": fn,
            "precision": precision, "recall": recall, "f1": f1}


@dataclass
class EvalReport:
    auroc: float
    auprc: float
    shd: int
    precision: float
    recall: float
    f1: float
    threshold: str
    cut: float | None
    diagonal_policy: str
    pairs: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def evaluate_graph(scores, truth, diagonal_policy: str = "include",
                   threshold: str = "density") -> tuple[EvalReport, np.ndarray]:
    """Continuous and discrete metrics; returns the report and the binary graph used."""
    scores, truth = np.asarray(scores, dtype=np.float64), np.asarray(truth)
    if threshold == "density":
        graph = threshold_density(scores, truth_density(truth, diagonal_policy), diagonal_policy)
        cut = None
    elif threshold == "cluster":
        graph, cut = threshold_cluster(scores, diagonal_policy)
    else:
        raise ValueError(f"unknown threshold rule {threshold!r}")
    d = discrete_metrics(graph, truth, diagonal_policy)
    s, y = edge_pairs(scores, truth, diagonal_policy)
    rep = EvalReport(auroc(scores, truth, diagonal_policy), auprc(scores, truth, diagonal_policy),
                     d["shd"], d["precision"], d["recall"], d["f1"], threshold, cut,
                     diagonal_policy, [[float(a), int(b)] for a, b in zip(s, y)])
    return rep, graph
