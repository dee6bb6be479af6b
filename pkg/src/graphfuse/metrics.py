"""Confusion matrices and precision / recall / F1 for per-pixel segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, classes: int, valid: np.ndarray | None = None) -> np.ndarray:
    """Rows are ground truth, columns predictions; only ``valid`` pixels are counted."""
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if valid is not None:
        keep = np.asarray(valid, dtype=bool).reshape(-1)
        truth, pred = truth[keep], pred[keep]
    return np.bincount(truth * classes + pred, minlength=classes * classes).reshape(classes, classes).astype(np.int64)


@dataclass
class Scores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray  # classes seen in the ground truth

    def macro(self) -> tuple[float, float, float]:
        """Means over ground-truth classes; a spurious prediction of an absent
        class still costs precision of the class it was taken from."""
        if not self.present.any():
            return 0.0, 0.0, 0.0
        p = self.present
        return float(self.precision[p].mean()), float(self.recall[p].mean()), float(self.f1[p].mean())


def scores(cm: np.ndarray) -> Scores:
    """Per-class scores; an empty denominator scores 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_count = cm.sum(axis=0)
    true_count = cm.sum(axis=1)
    precision = np.divide(tp, pred_count, out=np.zeros_like(tp), where=pred_count > 0)
    recall = np.divide(tp, true_count, out=np.zeros_like(tp), where=true_count > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Scores(precision, recall, f1, true_count > 0)


@dataclass
class Metrics:
    confusion: np.ndarray
    fraction: float
    precision: np.ndarray = field(init=False)
    recall: np.ndarray = field(init=False)
    f1: np.ndarray = field(init=False)
    # pooled over the whole split
    macro_precision: float = field(init=False)
    macro_recall: float = field(init=False)
    macro_f1: float = field(init=False)
    # mean over samples of each sample's macro score
    sample_precision: float = 0.0
    sample_recall: float = 0.0
    sample_f1: float = 0.0
    samples: int = 0

    def __post_init__(self):
        s = scores(self.confusion)
        self.precision, self.recall, self.f1 = s.precision, s.recall, s.f1
        self.macro_precision, self.macro_recall, self.macro_f1 = s.macro()

    @property
    def pixels(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / max(1, self.pixels))

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "samples": self.samples,
            "pixels": self.pixels,
            "accuracy": self.accuracy,
            "precision": self.sample_precision,
            "recall": self.sample_recall,
            "f1": self.sample_f1,
            "pooled_precision": self.macro_precision,
            "pooled_recall": self.macro_recall,
            "pooled_f1": self.macro_f1,
            "per_class": {
                "precision": self.precision.tolist(),
                "recall": self.recall.tolist(),
                "f1": self.f1.tolist(),
                "support": self.confusion.sum(axis=1).tolist(),
            },
        }


class MetricsAccumulator:
    def __init__(self, classes: int, fraction: float):
        self.classes = classes
        self.fraction = fraction
        self.confusion = np.zeros((classes, classes), dtype=np.int64)
        self.per_sample: list[tuple[float, float, float]] = []

    def add(self, truth: np.ndarray, pred: np.ndarray, valid: np.ndarray | None = None) -> None:
        cm = confusion_matrix(truth, pred, self.classes, valid)
        self.confusion += cm
        if cm.sum():
            self.per_sample.append(scores(cm).macro())

    def result(self) -> Metrics:
        m = Metrics(self.confusion.copy(), self.fraction)
        if self.per_sample:
            arr = np.array(self.per_sample)
            m.sample_precision, m.sample_recall, m.sample_f1 = (float(v) for v in arr.mean(axis=0))
        m.samples = len(self.per_sample)
        return m
