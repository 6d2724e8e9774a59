"""Confusion counts, IoU, F1, and evaluation reports.

Burned (=1) is the positive class everywhere. Dataset-level metrics are
micro-aggregated: confusion counts are summed globally, then the formulas
applied once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, target: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"pred shape {pred.shape} != target shape {target.shape}")
    for name, arr in (("pred", pred), ("target", target)):
        vals = np.unique(arr)
        if not np.all(np.isin(vals, (0, 1))):
            raise DataError(f"{name} values outside {{0,1}}: {vals[:8]}")
    p = pred.astype(bool)
    t = target.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def iou(c: ConfusionCounts) -> float:
    """tp / (tp+fp+fn); defined as 1.0 when there are no positives at all
    so empty-on-empty tiles do not poison averages."""
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def f1(c: ConfusionCounts) -> float:
    """2tp / (2tp+fp+fn); same degenerate-case convention as iou."""
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def f1_from_iou(i: float) -> float:
    """The dice/Jaccard identity F1 = 2*IoU / (1 + IoU)."""
    return 2.0 * i / (1.0 + i)


@dataclass
class EvalReport:
    """One metrics record for a (split, strategy) pair."""

    split: str
    strategy: str
    counts: ConfusionCounts
    n_scenes: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def iou(self) -> float:
        return iou(self.counts)

    @property
    def f1(self) -> float:
        return f1(self.counts)

    def to_json(self) -> str:
        record = {
            "split": self.split,
            "strategy": self.strategy,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
            "iou": self.iou,
            "f1": self.f1,
            "n_scenes": self.n_scenes,
        }
        record.update(self.extras)
        return json.dumps(record, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvalReport":
        d = json.loads(line)
        counts = ConfusionCounts(d.pop("tp"), d.pop("fp"), d.pop("fn"),
                                 d.pop("tn"))
        split = d.pop("split")
        strategy = d.pop("strategy")
        d.pop("iou", None)
        d.pop("f1", None)
        n_scenes = d.pop("n_scenes", 0)
        return cls(split=split, strategy=strategy, counts=counts,
                   n_scenes=n_scenes, extras=d)
