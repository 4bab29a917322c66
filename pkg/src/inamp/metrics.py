"""Scene classification metrics.

Confusion matrices have true labels on rows and predicted labels on columns.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateMarginals,
    EmptyInput,
    EmptyMatrix,
    IndexOutOfRange,
    LabelOutOfRange,
    NoTargetSamples,
    ShapeMismatch,
)
from .helpers import dump_kv

METRICS = ("accuracy", "kappa", "fn_rate")


@dataclass
class ConfusionMatrix:
    """``K x K`` counts, rows = true label, columns = predicted label."""

    counts: np.ndarray
    labels: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:  # noqa: D105
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeMismatch("counts must be square, got %s" % (self.counts.shape,))
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if not self.labels:
            self.labels = [str(i) for i in range(self.counts.shape[0])]
        elif len(self.labels) != self.counts.shape[0]:
            raise ShapeMismatch(
                "%d label names for %d classes"
                % (len(self.labels), self.counts.shape[0]),
            )

    @property
    def total(self) -> int:
        """Sum of all counts."""
        return int(self.counts.sum())

    def check_nonempty(self) -> None:
        """Raise EmptyMatrix when there are no counts."""
        if self.total == 0:
            raise EmptyMatrix("confusion matrix has no counts")


def confusion_matrix(
    true_labels: Sequence[int],
    pred_labels: Sequence[int],
    k: int,
    labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    """Count ``(true, predicted)`` pairs."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(pred_labels, dtype=np.int64).ravel()
    if t.size == 0:
        raise EmptyInput("no labels")
    if t.shape != p.shape:
        raise ShapeMismatch("%d true labels, %d predictions" % (t.size, p.size))
    if np.any((t < 0) | (t >= k) | (p < 0) | (p >= k)):
        raise LabelOutOfRange("labels must be in [0, %d)" % k)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, list(labels) if labels else [])


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of samples on the diagonal."""
    cm.check_nonempty()
    return float(np.trace(cm.counts)) / cm.total


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa ``(p_o - p_e) / (1 - p_e)``."""
    cm.check_nonempty()
    total = float(cm.total)
    p_o = float(np.trace(cm.counts)) / total
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    p_e = float(np.dot(rows, cols)) / (total * total)
    if p_e >= 1.0:
        raise DegenerateMarginals("expected agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def fn_rate(cm: ConfusionMatrix, target: int) -> float:
    """Fraction of true ``target`` samples predicted as another class."""
    k = cm.counts.shape[0]
    if not 0 <= target < k:
        raise IndexOutOfRange("target %d outside [0, %d)" % (target, k))
    row = int(cm.counts[target].sum())
    if row == 0:
        raise NoTargetSamples("no true samples of class %d" % target)
    return float(row - cm.counts[target, target]) / row


def report(cm: ConfusionMatrix, target: int) -> Dict[str, float]:
    """Accuracy, kappa and target miss rate; an undefined value is ``nan``."""
    result = {"accuracy": accuracy(cm)}
    try:
        result["kappa"] = kappa(cm)
    except DegenerateMarginals:
        result["kappa"] = float("nan")
    try:
        result["fn_rate"] = fn_rate(cm, target)
    except NoTargetSamples:
        result["fn_rate"] = float("nan")
    return result


def format_kv(values: Dict[str, float], cm: Optional[ConfusionMatrix] = None) -> str:
    """Metrics as key=value lines, optionally with the matrix rows."""
    lines: Dict[str, Any] = dict(values)
    if cm is not None:
        lines["labels"] = cm.labels
        for i, name in enumerate(cm.labels):
            lines["confusion.%s" % name] = [int(c) for c in cm.counts[i]]
    return dump_kv(lines)


def format_row(variant: str, values: Dict[str, float]) -> str:
    """One ``variant,accuracy,kappa,fn_rate`` CSV row."""
    return ",".join([variant] + ["%.4f" % values[m] for m in METRICS])
