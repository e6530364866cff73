"""Confusion-matrix metrics for binary risk predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import _sigmoid

FIELDS = ("tp", "fp", "tn", "fn", "accuracy", "f1", "sensitivity", "specificity",
          "precision", "balanced_accuracy")


class EvaluationError(ValueError):
    pass


def _ratio(num, den) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    f1: float
    sensitivity: float
    specificity: float
    precision: float
    balanced_accuracy: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "EvalReport":
        n = tp + fp + tn + fn
        if n == 0:
            raise EvaluationError("cannot evaluate an empty dataset")
        sens = _ratio(tp, tp + fn)
        spec = _ratio(tn, tn + fp)
        prec = _ratio(tp, tp + fp)
        f1 = _ratio(2 * prec * sens, prec + sens)
        return cls(int(tp), int(fp), int(tn), int(fn), (tp + tn) / n, f1, sens, spec, prec,
                   (sens + spec) / 2)

    def as_dict(self) -> dict:
        return asdict(self)


def report_from_predictions(predicted, labels) -> EvalReport:
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    tn = int(np.sum(~predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    return EvalReport.from_counts(tp, fp, tn, fn)


def report_from_logits(logits, labels, threshold: float = 0.5) -> EvalReport:
    # p == threshold counts as positive
    probs = _sigmoid(np.asarray(logits, dtype=np.float64))
    return report_from_predictions(probs >= threshold, labels)
