"""Frame-level evaluation: confusion matrix, per-class F1 and macro-F1.

Frames whose ground truth is MISSING never enter the confusion matrix.
Any precision/recall/F1 whose denominator is zero is defined as 0, so a
class that never occurs and is never predicted contributes 0 to the macro
mean (the conservative convention; the report also carries the
present-classes-only alternative for comparison).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import N_CLASSES, ExpressionLabel
from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = frames with truth i predicted as j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", c)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValidationError("confusion counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pred, truth, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    """Tally truth-vs-prediction counts, skipping MISSING-truth frames.

    Predictions must be total: a MISSING prediction is an error, not a
    skippable frame.
    """
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise ValidationError(f"length mismatch: {len(pred)} predictions, {len(truth)} truths")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, t in zip(pred, truth):
        p, t = int(p), int(t)
        if t == ExpressionLabel.MISSING:
            continue
        if p == ExpressionLabel.MISSING:
            raise ValidationError("prediction is MISSING; predictions must be total")
        if not (0 <= p < n_classes and 0 <= t < n_classes):
            raise ValidationError(f"label out of range: pred={p}, truth={t}")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def macro_f1(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Unweighted mean of per-class F1; returns (score, per_class)."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    precision = _safe_div(tp, counts.sum(axis=0))
    recall = _safe_div(tp, counts.sum(axis=1))
    per_class = _safe_div(2.0 * precision * recall, precision + recall)
    return float(per_class.mean()), per_class


def evaluation_report(pred, truth, n_classes: int = N_CLASSES) -> dict:
    """JSON-shaped summary of one evaluation run.

    macro_f1 averages over all classes (zero-support ones score 0);
    macro_f1_present_only restricts the mean to classes with support > 0.
    """
    cm = confusion(pred, truth, n_classes=n_classes)
    score, per_class = macro_f1(cm)
    support = cm.counts.sum(axis=1)
    present = support > 0
    return {
        "macro_f1": score,
        "macro_f1_present_only": float(per_class[present].mean()) if present.any() else 0.0,
        "per_class": [float(f) for f in per_class],
        "support": [int(s) for s in support],
        "n_eval_frames": cm.total,
    }
