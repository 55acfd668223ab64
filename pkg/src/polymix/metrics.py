"""Multi-label evaluation metrics.

Accuracy is cell-wise (Hamming) accuracy at a threshold; F1 is macro over
classes; ROC-AUC is computed per class by exact positive-negative pair
counting with midrank tie handling, then macro-averaged over classes that
have both a positive and a negative example. Classes lacking one side are
excluded and reported, never silently folded in.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import PolymixError


@dataclass(frozen=True)
class EvalBatch:
    """scores in [0,1] and binary labels, both [N x C]."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if s.ndim != 2 or s.shape != y.shape:
            raise PolymixError(f"scores {s.shape} and labels {y.shape} must be "
                               "equal 2-D shapes")
        if s.shape[0] == 0 or s.shape[1] == 0:
            raise PolymixError("empty evaluation batch")
        if not np.all(np.isfinite(s)) or np.min(s) < 0 or np.max(s) > 1:
            raise PolymixError("scores must be finite and in [0, 1]")
        if not np.all((y == 0) | (y == 1)):
            raise PolymixError("labels must be binary")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


def _check_threshold(threshold: float):
    if not (0 < threshold < 1):
        raise PolymixError(f"threshold {threshold} outside (0, 1)")


def hamming_accuracy(batch: EvalBatch, threshold: float = 0.5) -> float:
    """Fraction of all (sample, class) cells predicted correctly."""
    _check_threshold(threshold)
    predicted = batch.scores >= threshold
    return float(np.mean(predicted == (batch.labels == 1)))


def per_label_accuracy(batch: EvalBatch, threshold: float = 0.5) -> np.ndarray:
    _check_threshold(threshold)
    predicted = batch.scores >= threshold
    return np.mean(predicted == (batch.labels == 1), axis=0)


def _auc_pair_count(scores: np.ndarray, labels: np.ndarray) -> float:
    """(concordant + 0.5 * tied) / (P * N) over all positive-negative pairs.

    Computed through midranks, which equals the literal O(P*N) pair count:
    sum of positive ranks relates to concordant pairs by the Mann-Whitney
    identity, and average ranks split ties as 0.5 each.
    """
    pos = labels == 1
    n_pos = int(np.sum(pos))
    n_neg = len(labels) - n_pos
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    rank_sum = float(np.sum(ranks[pos]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_auc_per_class(batch: EvalBatch) -> tuple[np.ndarray, list[int]]:
    """Per-class AUC (NaN where not evaluable) and the skipped class indices."""
    aucs = np.full(batch.n_classes, np.nan)
    skipped = []
    for c in range(batch.n_classes):
        y = batch.labels[:, c]
        if 0 < np.sum(y) < len(y):
            aucs[c] = _auc_pair_count(batch.scores[:, c], y)
        else:
            skipped.append(c)
    return aucs, skipped


def roc_auc_macro(batch: EvalBatch, micro: bool = False) -> float:
    """Macro mean of per-class AUC; `micro` pools all cells into one curve."""
    if micro:
        flat_scores = batch.scores.reshape(-1)
        flat_labels = batch.labels.reshape(-1)
        n_pos = np.sum(flat_labels)
        if n_pos == 0 or n_pos == len(flat_labels):
            raise PolymixError("micro AUC needs both positive and negative cells")
        return float(_auc_pair_count(flat_scores, flat_labels))
    aucs, skipped = roc_auc_per_class(batch)
    if len(skipped) == batch.n_classes:
        raise PolymixError("no class has both positive and negative examples")
    return float(np.nanmean(aucs))


def f1_macro(batch: EvalBatch, threshold: float = 0.5) -> float:
    """Macro F1 over classes present in the labels; 0/0 counts as 0."""
    _check_threshold(threshold)
    predicted = batch.scores >= threshold
    actual = batch.labels == 1
    present = np.any(actual, axis=0)
    if not np.any(present):
        raise PolymixError("no class has a positive example")
    f1s = []
    for c in np.flatnonzero(present):
        tp = float(np.sum(predicted[:, c] & actual[:, c]))
        fp = float(np.sum(predicted[:, c] & ~actual[:, c]))
        fn = float(np.sum(~predicted[:, c] & actual[:, c]))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def threshold_sweep(batch: EvalBatch,
                    grid: Sequence[float]) -> list[tuple[float, float]]:
    """(threshold, hamming accuracy) pairs in grid order."""
    if len(grid) == 0:
        raise PolymixError("empty threshold grid")
    return [(float(t), hamming_accuracy(batch, t)) for t in grid]


def write_threshold_csv(curve: Sequence[tuple[float, float]],
                        path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "accuracy"])
        for t, acc in curve:
            writer.writerow([f"{t:.6g}", f"{acc:.10g}"])


DEFAULT_THRESHOLD_GRID = tuple(np.round(np.arange(0.05, 1.0, 0.05), 6))


@dataclass
class MetricsReport:
    """Headline numbers plus the notes needed to read them correctly.

    accuracy is Hamming accuracy and f1 is macro F1, both at `threshold`;
    roc_auc is macro over evaluable classes, with the skipped ones listed.
    """

    accuracy: float
    roc_auc: float
    f1: float
    per_label_accuracy: list[float]
    threshold_curve: list[tuple[float, float]]
    threshold: float = 0.5
    skipped_auc_classes: list[int] = field(default_factory=list)

    def __post_init__(self):
        for name in ("accuracy", "roc_auc", "f1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise PolymixError(f"{name} = {v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps({
            "accuracy": self.accuracy,
            "roc_auc": self.roc_auc,
            "f1": self.f1,
            "per_label_accuracy": self.per_label_accuracy,
            "threshold_curve": [[t, a] for t, a in self.threshold_curve],
            "threshold": self.threshold,
            "skipped_auc_classes": self.skipped_auc_classes,
            "notes": "accuracy=cell-wise (Hamming); f1=macro; "
                     "roc_auc=macro pair-count over evaluable classes",
        }, indent=2)


def evaluate_batch(batch: EvalBatch, threshold: float = 0.5,
                   grid: Optional[Sequence[float]] = None) -> MetricsReport:
    grid = DEFAULT_THRESHOLD_GRID if grid is None else grid
    _, skipped = roc_auc_per_class(batch)
    return MetricsReport(
        accuracy=hamming_accuracy(batch, threshold),
        roc_auc=roc_auc_macro(batch),
        f1=f1_macro(batch, threshold),
        per_label_accuracy=[float(v) for v in per_label_accuracy(batch, threshold)],
        threshold_curve=threshold_sweep(batch, grid),
        threshold=threshold,
        skipped_auc_classes=skipped,
    )
