"""Brute-force reference implementations used as test oracles."""

from fractions import Fraction

import numpy as np


def pairs(scores, truth, diagonal_policy="include"):
    n = len(truth)
    out = []
    for i in range(n):
        for j in range(n):
            if diagonal_policy == "exclude" and i == j:
                continue
            out.append((float(scores[i][j]), int(truth[i][j])))
    return out


def auroc_pairs(scores, truth, diagonal_policy="include") -> Fraction:
    """Probability a random positive outscores a random negative (ties count half)."""
    p = pairs(scores, truth, diagonal_policy)
    pos = [s for s, y in p if y]
    neg = [s for s, y in p if not y]
    wins = Fraction(0)
    for a in pos:
        for b in neg:
            wins += 1 if a > b else Fraction(1, 2) if a == b else 0
    return wins / (len(pos) * len(neg))


def auprc_sweep(scores, truth, diagonal_policy="include") -> Fraction:
    """Sum over every distinct threshold of (recall gain) x precision, predicting score >= tau."""
    p = pairs(scores, truth, diagonal_policy)
    total_pos = sum(y for _, y in p)
    ap, prev_recall = Fraction(0), Fraction(0)
    for tau in sorted({s for s, _ in p}, reverse=True):
        hits = [y for s, y in p if s >= tau]
        tp = sum(hits)
        recall = Fraction(tp, total_pos)
        ap += (recall - prev_recall) * Fraction(tp, len(hits))
        prev_recall = recall
    return ap


def discrete(pred, truth, diagonal_policy="include"):
    n = len(truth)
    tp = fp = fn = 0
    for i in range(n):
        for j in range(n):
            if diagonal_policy == "exclude" and i == j:
                continue
            if pred[i][j] and truth[i][j]:
                tp += 1
            elif pred[i][j]:
                fp += 1
            elif truth[i][j]:
                fn += 1
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return {"shd": fp + fn, "tp": tp, "fp": fp, "fn": fn,
            "precision": precision, "recall": recall, "f1": f1}


def all_binary(n: int):
    """Every n x n 0/1 matrix, row-major bit order."""
    for code in range(2 ** (n * n)):
        bits = [(code >> k) & 1 for k in range(n * n)]
        yield np.array(bits, dtype=np.int64).reshape(n, n)


def auroc_threshold_sweep(scores, truth, diagonal_policy="include") -> float:
    """Trapezoidal area under the ROC polyline from an explicit threshold sweep."""
    p = pairs(scores, truth, diagonal_policy)
    P = sum(y for _, y in p)
    N = len(p) - P
    pts = [(0.0, 0.0)]
    for tau in sorted({s for s, _ in p}, reverse=True):
        tp = sum(y for s, y in p if s >= tau)
        fp = sum(1 - y for s, y in p if s >= tau)
        pts.append((fp / N, tp / P))
    return sum((x2 - x1) * (y1 + y2) / 2 for (x1, y1), (x2, y2) in zip(pts, pts[1:]))
