"""Classification metrics: confusion matrix, precision/recall, IoU and the
reflection-removal statistics.

Truth classes collapse glass, mirror and other reflective labels into a single
Surface class; predictions add a fifth "removed" column holding Unclassified
points, which the filtering stage drops alongside predicted Reflections.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

TRUTH_CLASSES = ("normal", "surface", "reflection", "obstacle")
PRED_CLASSES = TRUTH_CLASSES + ("removed",)

# raw ground-truth labels -> truth class row
_TRUTH_COLLAPSE = np.array([0, 1, 1, 1, 2, 3], dtype=np.int64)


def collapse_truth(raw_labels: np.ndarray) -> np.ndarray:
    """Map raw labels {0 Normal, 1 Glass, 2 Mirror, 3 OtherRef, 4 Reflection,
    5 Obstacle} onto the 4 evaluated classes."""
    raw = np.asarray(raw_labels, dtype=np.int64)
    if raw.size and (raw.min() < 0 or raw.max() > 5):
        raise ValueError("raw truth label outside {0..5}")
    return _TRUTH_COLLAPSE[raw]


@dataclass
class ConfusionMatrix:
    """4x5 truth x predicted counts."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((4, 5),
                                                                dtype=np.int64))

    @staticmethod
    def from_pairs(truth_raw: np.ndarray, predicted: np.ndarray) -> "ConfusionMatrix":
        """Accumulate from raw truth labels (0..5) and predicted labels (0..4,
        4 = unclassified/removed)."""
        truth = collapse_truth(truth_raw)
        pred = np.asarray(predicted, dtype=np.int64)
        if truth.shape != pred.shape:
            raise ValueError("truth / prediction length mismatch")
        if pred.size and (pred.min() < 0 or pred.max() > 4):
            raise ValueError("predicted label outside {0..4}")
        cm = ConfusionMatrix()
        np.add.at(cm.counts, (truth, pred), 1)
        return cm

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def total(self) -> int:
        return int(self.counts.sum())


def precision_recall(cm: ConfusionMatrix
                     ) -> Dict[str, Tuple[Optional[float], Optional[float]]]:
    """Per-class (precision, recall); None marks an undefined 0/0 ratio."""
    out: Dict[str, Tuple[Optional[float], Optional[float]]] = {}
    counts = cm.counts
    for c, name in enumerate(TRUTH_CLASSES):
        tp = int(counts[c, c])
        pred_total = int(counts[:, c].sum())
        truth_total = int(counts[c, :].sum())
        precision = tp / pred_total if pred_total else None
        recall = tp / truth_total if truth_total else None
        out[name] = (precision, recall)
    return out


def iou(cm: ConfusionMatrix) -> Dict[str, Optional[float]]:
    """Per-class intersection over union plus a pooled micro total."""
    counts = cm.counts
    out: Dict[str, Optional[float]] = {}
    tp_sum = fp_sum = fn_sum = 0
    for c, name in enumerate(TRUTH_CLASSES):
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum()) - tp
        fn = int(counts[c, :].sum()) - tp
        denom = tp + fp + fn
        out[name] = tp / denom if denom else None
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    denom = tp_sum + fp_sum + fn_sum
    out["total_micro"] = tp_sum / denom if denom else None
    return out


@dataclass
class RemovalMetrics:
    non_reflection_precision: Optional[float]
    indoor_precision: Optional[float]
    reflection_removal_rate: Optional[float]


def removal_metrics(cm: ConfusionMatrix) -> RemovalMetrics:
    """Filtering quality statistics.

    Removed points are those predicted Reflection plus the Unclassified
    column; retained points are everything else. Removal of truth-Reflection
    points therefore can exceed the Reflection recall.
    """
    counts = cm.counts
    r = TRUTH_CLASSES.index("reflection")
    removed_cols = [r, 4]
    retained_cols = [c for c in range(5) if c not in removed_cols]

    retained = counts[:, retained_cols].sum()
    retained_ok = counts[:, retained_cols].sum() - counts[r, retained_cols].sum()
    non_reflection = retained_ok / retained if retained else None

    indoor_pred = counts[:, 0].sum() + counts[:, 1].sum()
    indoor_ok = counts[0, 0] + counts[0, 1] + counts[1, 0] + counts[1, 1]
    indoor = indoor_ok / indoor_pred if indoor_pred else None

    truth_r = counts[r, :].sum()
    removed_r = counts[r, removed_cols].sum()
    removal = removed_r / truth_r if truth_r else None
    return RemovalMetrics(non_reflection, indoor, removal)


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def format_report(cm: ConfusionMatrix) -> str:
    """Human-readable metrics table."""
    pr = precision_recall(cm)
    ious = iou(cm)
    rm = removal_metrics(cm)
    lines = ["class        precision  recall     iou",
             "-----        ---------  ------     ---"]
    for name in TRUTH_CLASSES:
        p, r = pr[name]
        lines.append(f"{name:<12} {_fmt(p):>9}  {_fmt(r):>9}  {_fmt(ious[name]):>9}")
    lines.append(f"total IoU (micro): {_fmt(ious['total_micro'])}")
    lines.append(f"non_reflection_precision: {_fmt(rm.non_reflection_precision)}")
    lines.append(f"indoor_precision: {_fmt(rm.indoor_precision)}")
    lines.append(f"reflection_removal_rate: {_fmt(rm.reflection_removal_rate)}")
    lines.append(f"evaluated points: {cm.total()}")
    return "\n".join(lines)


def write_report(cm: ConfusionMatrix, text_path, kv_path) -> None:
    """Emit the plain-text table and a machine-readable key=value file."""
    Path(text_path).write_text(format_report(cm) + "\n")
    pr = precision_recall(cm)
    ious = iou(cm)
    rm = removal_metrics(cm)
    kv = []
    for name in TRUTH_CLASSES:
        p, r = pr[name]
        kv.append(f"precision.{name} = {_fmt(p)}")
        kv.append(f"recall.{name} = {_fmt(r)}")
        kv.append(f"iou.{name} = {_fmt(ious[name])}")
    kv.append(f"iou.total_micro = {_fmt(ious['total_micro'])}")
    kv.append(f"non_reflection_precision = {_fmt(rm.non_reflection_precision)}")
    kv.append(f"indoor_precision = {_fmt(rm.indoor_precision)}")
    kv.append(f"reflection_removal_rate = {_fmt(rm.reflection_removal_rate)}")
    kv.append(f"points = {cm.total()}")
    Path(kv_path).write_text("\n".join(kv) + "\n")
