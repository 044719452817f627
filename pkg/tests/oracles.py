"""Slow, obviously-correct reference implementations used only by tests."""
from __future__ import annotations

import itertools

import numpy as np


def brute_force_largest_rectangle(mask):
    """Enumerate every sub-rectangle; return (area, top, left, height, width).

    Ties resolve to the smallest top, then smallest left.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    # prefix sums of foreground counts
    ps = np.zeros((h + 1, w + 1), dtype=int)
    ps[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    best = None
    for top in range(h):
        for left in range(w):
            for bottom in range(top, h):
                for right in range(left, w):
                    fg = ps[bottom + 1, right + 1] - ps[top, right + 1] - ps[bottom + 1, left] + ps[top, left]
                    if fg:
                        continue
                    area = (bottom - top + 1) * (right - left + 1)
                    key = (-area, top, left)
                    if best is None or key < best[0]:
                        best = (key, (area, top, left, bottom - top + 1, right - left + 1))
    return None if best is None else best[1]


def threshold_sweep_ap(scores, targets):
    """Average precision by sweeping every distinct score as a threshold."""
    scores = [float(s) for s in np.ravel(scores)]
    targets = [bool(t) for t in np.ravel(targets)]
    n_pos = sum(targets)
    ap = 0.0
    prev_recall = 0.0
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, t in zip(scores, targets) if s >= thr and t)
        pp = sum(1 for s in scores if s >= thr)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / pp)
        prev_recall = recall
    return ap


def pairwise_auc(scores, positives):
    """Wilcoxon-Mann-Whitney: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def central_difference(f, x: np.ndarray, index, step: float = 1e-3) -> float:
    old = x[index]
    x[index] = old + step
    up = f()
    x[index] = old - step
    down = f()
    x[index] = old
    return (up - down) / (2 * step)
