"""Binary classification metrics: accuracy, precision, recall, F1, ROC AUC.

Conventions, fixed and tested:
  * a score is predicted positive iff score >= threshold (default 0.5);
  * undefined ratios (zero denominators) evaluate to 0.0 and are listed
    in the bundle's ``degenerate`` field;
  * tied scores collapse into a single ROC step, so the trapezoidal AUC
    equals Mann-Whitney pair counting with ties worth one half.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricsError


@dataclass(frozen=True)
class MetricBundle:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    threshold: float
    support_pos: int
    support_neg: int
    degenerate: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "threshold": self.threshold,
            "support_pos": self.support_pos,
            "support_neg": self.support_neg,
            "degenerate": list(self.degenerate),
        }


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered from (0, 0) to (1, 1).

    ``thresholds[i]`` is the smallest score still predicted positive at
    point i; the leading (0, 0) point carries +inf.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def _as_arrays(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise MetricsError(
            f"labels and scores length mismatch: {labels.shape} vs {scores.shape}"
        )
    if labels.size == 0:
        raise MetricsError("labels must be non-empty")
    return labels.astype(np.int64), scores


def confusion_at_threshold(labels, scores, threshold: float = 0.5):
    """Return (TP, FP, TN, FN) with predicted positive iff score >= threshold."""
    labels, scores = _as_arrays(labels, scores)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return tp, fp, tn, fn


def precision_recall_f1_accuracy(tp: int, fp: int, tn: int, fn: int):
    """Return (precision, recall, f1, accuracy); zero denominators yield 0.0."""
    (precision, recall, f1, accuracy), _ = _prfa_with_flags(tp, fp, tn, fn)
    return precision, recall, f1, accuracy


def _prfa_with_flags(tp, fp, tn, fn):
    total = tp + fp + tn + fn
    if min(tp, fp, tn, fn) < 0:
        raise MetricsError("confusion counts must be non-negative")
    if total == 0:
        raise MetricsError("confusion counts are all zero")
    flags = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    accuracy = (tp + tn) / total
    return (precision, recall, f1, accuracy), tuple(flags)


def roc_curve(labels, scores) -> RocCurve:
    """Sweep thresholds over the unique scores, descending.

    Tied scores form a single step. The curve starts at (0, 0) with
    threshold +inf and ends at (1, 1) at the lowest observed score.
    """
    labels, scores = _as_arrays(labels, scores)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC undefined for single-class labels")

    desc = np.argsort(-scores, kind="stable")
    sorted_scores = scores[desc]
    sorted_labels = labels[desc]

    # last index of each tied block == cumulative counts at that threshold
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    block_ends = np.concatenate([distinct, [scores.size - 1]])

    tps = np.cumsum(sorted_labels)[block_ends]
    fps = 1 + block_ends - tps

    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    thresholds = np.concatenate([[np.inf], sorted_scores[block_ends]])
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


def roc_auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def evaluate_scores(labels, scores, threshold: float = 0.5) -> MetricBundle:
    """Full metric bundle for one set of scores on one labelled set."""
    tp, fp, tn, fn = confusion_at_threshold(labels, scores, threshold)
    (precision, recall, f1, accuracy), flags = _prfa_with_flags(tp, fp, tn, fn)
    auc = roc_auc(roc_curve(labels, scores))
    return MetricBundle(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        roc_auc=auc,
        threshold=threshold,
        support_pos=tp + fn,
        support_neg=tn + fp,
        degenerate=flags,
    )


def write_roc_csv(curve: RocCurve, path) -> None:
    """Write the curve as CSV with header fpr,tpr,threshold."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for f, t, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
            writer.writerow([repr(float(f)), repr(float(t)), repr(float(thr))])
