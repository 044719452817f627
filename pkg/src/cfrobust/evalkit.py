"""Accuracy, macro one-vs-rest AUC, saliency AUPR, next-class probability
shift and R^2, plus per-split reports."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .augment import normalize
from .nnet import batch_input_gradient

REPORT_COLUMNS = ["model", "seed", "split", "accuracy", "macro_auc", "saliency_aupr", "next_class_shift"]


class MissingClassWarning(UserWarning):
    pass


@dataclass
class MetricReport:
    split: str
    accuracy: float
    macro_auc: float = math.nan
    saliency_aupr: float = math.nan
    next_class_shift: float = math.nan
    per_class_accuracy: dict = field(default_factory=dict)

    def row(self, model: str, seed: int) -> dict:
        d = asdict(self)
        return {"model": model, "seed": seed, **{k: d[k] for k in REPORT_COLUMNS[2:]}}


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches; ``predictions`` may be labels or (N, K) scores."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.ndim == 2:
        predictions = predictions.argmax(axis=1)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    return float(np.mean(predictions == labels))


def binary_auc(scores, positives) -> float:
    """ROC AUC by the rank-sum statistic; tied scores take their midrank."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positives and negatives")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_ovr_auc(scores, labels, num_classes: int | None = None) -> float:
    """Unweighted mean of one-vs-rest AUCs over the classes present in ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    k = num_classes or scores.shape[1]
    present = [c for c in range(k) if np.any(labels == c)]
    if len(present) < 2:
        raise ValueError("macro AUC is undefined with fewer than two classes present")
    if len(present) < k:
        warnings.warn(f"classes {sorted(set(range(k)) - set(present))} absent; skipped", MissingClassWarning)
    return float(np.mean([binary_auc(scores[:, c], labels == c) for c in present]))


def saliency_aupr(saliency, region) -> float:
    """Average precision of ranking pixels by ``saliency`` against the foreground.

    Tied scores form a single threshold: AP = sum over distinct thresholds of
    (recall gain) * precision at that threshold.
    """
    s = np.asarray(saliency, dtype=np.float64).ravel()
    t = np.asarray(region, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValueError("saliency and region shapes differ")
    n_pos = int(t.sum())
    if n_pos == 0 or n_pos == t.size:
        raise ValueError("region must contain both foreground and background")
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(t)[last_of_group]
    predicted = last_of_group + 1
    precision = tp / predicted
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def r_squared(xs, ys) -> float:
    """Squared Pearson correlation."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) < 2 or len(xs) != len(ys):
        raise ValueError("need at least two paired points")
    if np.ptp(xs) == 0:
        raise ValueError("xs are constant")
    if np.ptp(ys) == 0:
        return 0.0
    r = np.corrcoef(xs, ys)[0, 1]
    return float(r * r)


# ---------------------------------------------------------------- model-based
def _stack(examples):
    images = np.stack([e.image for e in examples])
    regions = np.stack([e.region for e in examples])
    labels = np.array([e.label for e in examples])
    return images, regions, labels


def predict_proba(net, images) -> np.ndarray:
    return net.predict_proba(normalize(images).astype(net.dtype))


def next_class_shift(net, original, mixed_next) -> float:
    """Mean rise in p((y + 1) mod K) when the background is swapped to the next class's."""
    if len(original) != len(mixed_next) or not original:
        raise ValueError("splits are not paired")
    for a, b in zip(original, mixed_next):
        if a.label != b.label or b.meta.get("source", a.id) != a.id:
            raise ValueError(f"splits are not paired at {a.id}")
    k = net.num_classes
    p0 = predict_proba(net, np.stack([e.image for e in original]))
    p1 = predict_proba(net, np.stack([e.image for e in mixed_next]))
    nxt = (np.array([e.label for e in original]) + 1) % k
    rows = np.arange(len(nxt))
    return float(np.mean(p1[rows, nxt] - p0[rows, nxt]))


def saliency_maps(net, images, classes, batch_size: int = 128) -> np.ndarray:
    """Per-pixel channel-L2 norms of the input gradient of the given class logits."""
    out = []
    for i in range(0, len(images), batch_size):
        g = batch_input_gradient(net, normalize(images[i:i + batch_size]).astype(net.dtype), classes[i:i + batch_size])
        out.append(np.sqrt((g.astype(np.float64) ** 2).sum(axis=-1)))
    return np.concatenate(out)


def mean_saliency_aupr(net, examples, limit: int | None = None) -> float:
    """Mean AUPR of ground-truth-class saliency against the foreground masks."""
    examples = list(examples)[:limit] if limit else list(examples)
    images, regions, labels = _stack(examples)
    maps = saliency_maps(net, images, labels)
    vals = [saliency_aupr(m, r) for m, r in zip(maps, regions) if 0 < r.sum() < r.size]
    return float(np.mean(vals)) if vals else math.nan


def evaluate_split(net, examples, split: str, saliency_limit: int | None = None,
                   mixed_next=None) -> MetricReport:
    images, regions, labels = _stack(examples)
    proba = predict_proba(net, images)
    preds = proba.argmax(axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MissingClassWarning)
        try:
            auc = macro_ovr_auc(proba, labels, net.num_classes)
        except ValueError:
            auc = math.nan
    per_class = {int(c): float(np.mean(preds[labels == c] == c)) for c in np.unique(labels)}
    report = MetricReport(split, accuracy(preds, labels), auc,
                          mean_saliency_aupr(net, examples, saliency_limit), math.nan, per_class)
    if mixed_next is not None:
        report.next_class_shift = next_class_shift(net, examples, mixed_next)
    return report


def write_reports(path, rows) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items() if k in REPORT_COLUMNS})
