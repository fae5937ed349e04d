"""Confusion counts and the Rec/Pre/OA/IoU/F1 change-detection metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ContractError(f"negative confusion count in {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn}


def confusion(pred: np.ndarray, label: np.ndarray, mask: np.ndarray | None = None) -> ConfusionCounts:
    """Count outcomes over the (optionally masked) pixels; change is positive."""
    pred = np.asarray(pred).astype(bool)
    label = np.asarray(label).astype(bool)
    if pred.shape != label.shape:
        raise ContractError(f"prediction {pred.shape} and label {label.shape} differ")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != label.shape:
            raise ContractError(f"mask {mask.shape} and label {label.shape} differ")
        pred, label = pred[mask], label[mask]
    tp = int(np.count_nonzero(pred & label))
    fp = int(np.count_nonzero(pred & ~label))
    fn = int(np.count_nonzero(~pred & label))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, tn, fp, fn)


@dataclass(frozen=True)
class MetricReport:
    rec: float
    pre: float
    oa: float
    iou: float
    f1: float
    degenerate: frozenset = field(default_factory=frozenset)

    def to_dict(self) -> dict:
        return {"Rec": self.rec, "Pre": self.pre, "OA": self.oa, "IoU": self.iou,
                "F1": self.f1, "degenerate": sorted(self.degenerate)}

    def get(self, name: str) -> float:
        return {"rec": self.rec, "pre": self.pre, "oa": self.oa,
                "iou": self.iou, "f1": self.f1}[name.lower()]


def _ratio(num: float, den: float, name: str, flags: set) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def metrics(counts: ConfusionCounts) -> MetricReport:
    """Rec, Pre, OA, IoU and F1; a 0/0 yields 0 and is listed in ``degenerate``."""
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    flags: set[str] = set()
    rec = _ratio(tp, tp + fn, "Rec", flags)
    pre = _ratio(tp, tp + fp, "Pre", flags)
    oa = _ratio(tp + tn, tp + tn + fp + fn, "OA", flags)
    iou = _ratio(tp, tp + fp + fn, "IoU", flags)
    # harmonic mean of Rec and Pre, written without reciprocals
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "F1", flags)
    return MetricReport(rec, pre, oa, iou, f1, frozenset(flags))


def iou_from_f1(f1: float) -> float:
    return f1 / (2.0 - f1)
