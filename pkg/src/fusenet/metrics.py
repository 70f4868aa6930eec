"""Confusion matrix, per-class precision/recall/F1, accuracy and weighted F1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns are predicted classes."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    macro_precision: float
    macro_recall: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    undefined_precision: list[int]
    undefined_recall: list[int]

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision_macro": self.macro_precision,
            "recall_macro": self.macro_recall,
            "precision_weighted": self.weighted_precision,
            "recall_weighted": self.weighted_recall,
            "f1_weighted": self.weighted_f1,
        }


def confusion(y_true, y_pred, num_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise UsageError(f"{y_true.size} true labels vs {y_pred.size} predictions")
    for name, ys in (("y_true", y_true), ("y_pred", y_pred)):
        if ys.size and (ys.min() < 0 or ys.max() >= num_classes):
            raise UsageError(f"{name} has labels outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def _safe_ratio(num, den):
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Derive every metric from ``cm``.

    A class that is never predicted gets precision 0; one that never occurs
    gets recall 0. Both cases are listed in ``undefined_precision`` /
    ``undefined_recall``.
    """
    m = cm.counts.astype(np.float64)
    total = m.sum()
    if total < 1:
        raise UsageError("cannot report on an empty confusion matrix")
    tp = np.diag(m)
    actual = m.sum(axis=1)
    predicted = m.sum(axis=0)

    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, actual)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    weights = actual / total
    present = actual > 0

    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        support=cm.counts.sum(axis=1),
        weights=weights,
        macro_precision=float(precision[present].mean()),
        macro_recall=float(recall[present].mean()),
        weighted_precision=float((weights * precision).sum()),
        weighted_recall=float((weights * recall).sum()),
        weighted_f1=float((weights * f1).sum()),
        undefined_precision=[int(i) for i in np.flatnonzero(predicted == 0)],
        undefined_recall=[int(i) for i in np.flatnonzero(actual == 0)],
    )


def default_names(k: int) -> list[str]:
    return [f"class_{i}" for i in range(k)]


def format_key_values(rep: MetricsReport, class_names=None) -> str:
    """Machine-readable form: one ``key value`` pair per line, 6 decimals."""
    names = class_names or default_names(len(rep.precision))
    lines = [f"{k} {v:.6f}" for k, v in rep.as_dict().items()]
    for i, name in enumerate(names):
        lines.append(f"precision.{name} {rep.precision[i]:.6f}")
        lines.append(f"recall.{name} {rep.recall[i]:.6f}")
        lines.append(f"f1.{name} {rep.f1[i]:.6f}")
        lines.append(f"support.{name} {int(rep.support[i])}")
    return "\n".join(lines) + "\n"


def format_table(rep: MetricsReport, class_names=None) -> str:
    names = class_names or default_names(len(rep.precision))
    width = max(12, max(len(n) for n in names))
    head = f"{'class':<{width}}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'support':>7}"
    lines = [head, "-" * len(head)]
    for i, name in enumerate(names):
        flag = " *" if i in rep.undefined_precision or i in rep.undefined_recall else ""
        lines.append(f"{name:<{width}}  {rep.precision[i]:9.4f}  {rep.recall[i]:9.4f}  "
                     f"{rep.f1[i]:9.4f}  {int(rep.support[i]):7d}{flag}")
    lines.append("-" * len(head))
    lines.append(f"{'macro':<{width}}  {rep.macro_precision:9.4f}  {rep.macro_recall:9.4f}")
    lines.append(f"{'weighted':<{width}}  {rep.weighted_precision:9.4f}  "
                 f"{rep.weighted_recall:9.4f}  {rep.weighted_f1:9.4f}")
    lines.append(f"{'accuracy':<{width}}  {rep.accuracy:9.4f}")
    if rep.undefined_precision or rep.undefined_recall:
        lines.append("* zero denominator; value reported as 0")
    return "\n".join(lines) + "\n"


def format_confusion(cm: ConfusionMatrix, class_names=None) -> str:
    names = class_names or default_names(cm.num_classes)
    width = max(max(len(n) for n in names), len(str(cm.counts.max(initial=0)))) + 1
    lines = [" " * width + " " + " ".join(f"{n:>{width}}" for n in names)]
    for name, row in zip(names, cm.counts):
        lines.append(f"{name:>{width}} " + " ".join(f"{int(v):>{width}}" for v in row))
    return "\n".join(lines) + "\n"
