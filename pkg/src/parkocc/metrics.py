"""Voxelwise confusion counts and the IoU / mIoU / precision / recall ratios.

A voxel counts as occupied when its label is neither 0 nor 255. Voxels whose
ground-truth label is in the ignore set are dropped before any counting.
Ratios with a zero denominator raise :class:`UndefinedMetricError` instead of
returning 0.0, so absent classes cannot silently drag a mean down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .constants import EMPTY_LABEL, FREE_LABELS, INVALID_LABEL
from .errors import ShapeMismatchError, UndefinedMetricError

BINARY = "binary"


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class ConfusionCounts:
    per_class: dict = field(default_factory=dict)
    binary: ClassCounts = field(default_factory=ClassCounts)

    def __getitem__(self, key) -> ClassCounts:
        if key == BINARY:
            return self.binary
        return self.per_class.get(int(key), ClassCounts())

    def __add__(self, other):
        keys = sorted(set(self.per_class) | set(other.per_class))
        return ConfusionCounts({k: self[k] + other[k] for k in keys}, self.binary + other.binary)

    def classes(self) -> list[int]:
        return sorted(self.per_class)


def confusion(pred, gt, ignore=(INVALID_LABEL,)) -> ConfusionCounts:
    pred = np.asarray(getattr(pred, "labels", pred))
    gt = np.asarray(getattr(gt, "labels", gt))
    if pred.shape != gt.shape:
        raise ShapeMismatchError(pred.shape, gt.shape)
    keep = ~np.isin(gt, list(ignore)) if ignore else np.ones(gt.shape, dtype=bool)
    p = pred[keep].astype(np.int64).ravel()
    g = gt[keep].astype(np.int64).ravel()

    ids, pred_n = np.unique(p, return_counts=True)
    pred_count = dict(zip(ids.tolist(), pred_n.tolist()))
    ids, gt_n = np.unique(g, return_counts=True)
    gt_count = dict(zip(ids.tolist(), gt_n.tolist()))
    ids, hit_n = np.unique(g[p == g], return_counts=True)
    hits = dict(zip(ids.tolist(), hit_n.tolist()))

    per_class = {}
    for k in sorted(set(pred_count) | set(gt_count)):
        tp = hits.get(k, 0)
        per_class[k] = ClassCounts(tp, pred_count.get(k, 0) - tp, gt_count.get(k, 0) - tp)

    occ_p = ~np.isin(p, FREE_LABELS)
    occ_g = ~np.isin(g, FREE_LABELS)
    binary = ClassCounts(
        int(np.count_nonzero(occ_p & occ_g)),
        int(np.count_nonzero(occ_p & ~occ_g)),
        int(np.count_nonzero(~occ_p & occ_g)),
    )
    return ConfusionCounts(per_class, binary)


def _ratio(num, den, what):
    if den <= 0:
        raise UndefinedMetricError(f"{what} undefined: zero denominator")
    return num / den


def iou(c: ConfusionCounts, k=BINARY) -> float:
    cc = c[k]
    return _ratio(cc.tp, cc.fp + cc.tp + cc.fn, f"IoU of class {k}")


def precision(c: ConfusionCounts, k=BINARY) -> float:
    cc = c[k]
    return _ratio(cc.tp, cc.tp + cc.fp, f"precision of class {k}")


def recall(c: ConfusionCounts, k=BINARY) -> float:
    cc = c[k]
    return _ratio(cc.tp, cc.tp + cc.fn, f"recall of class {k}")


class MeanIoU(NamedTuple):
    value: float
    excluded: tuple  # classes whose IoU was undefined


def default_classes(c: ConfusionCounts, include_empty=False) -> list[int]:
    skip = {INVALID_LABEL} if include_empty else {EMPTY_LABEL, INVALID_LABEL}
    classes = [k for k in c.classes() if k not in skip]
    if include_empty and EMPTY_LABEL not in classes:
        classes.insert(0, EMPTY_LABEL)
    return classes


def miou(c: ConfusionCounts, classes=None, policy="exclude") -> MeanIoU:
    """Mean of per-class IoU. ``policy`` is ``"exclude"`` or ``"zero"`` for undefined classes."""
    if policy not in ("exclude", "zero"):
        raise ValueError(f"unknown policy {policy!r}")
    classes = default_classes(c) if classes is None else list(classes)
    if not classes:
        raise UndefinedMetricError("mIoU undefined: no classes")
    values, excluded = [], []
    for k in classes:
        try:
            values.append(iou(c, k))
        except UndefinedMetricError:
            excluded.append(k)
            if policy == "zero":
                values.append(0.0)
    if not values or len(excluded) == len(classes):
        raise UndefinedMetricError("mIoU undefined: every class has an empty union")
    return MeanIoU(sum(values) / len(values), tuple(excluded))


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def report(c: ConfusionCounts, classes=None, policy="exclude") -> dict:
    """Machine-readable summary; undefined ratios are ``None``."""
    classes = default_classes(c) if classes is None else list(classes)
    m = _maybe(miou, c, classes, policy)
    b = c.binary
    return {
        "per_class": {
            str(k): {"tp": c[k].tp, "fp": c[k].fp, "fn": c[k].fn, "iou": _maybe(iou, c, k)}
            for k in classes
        },
        "binary": {
            "tp": b.tp,
            "fp": b.fp,
            "fn": b.fn,
            "iou": _maybe(iou, c),
            "precision": _maybe(precision, c),
            "recall": _maybe(recall, c),
        },
        "miou": None if m is None else m.value,
        "excluded_classes": list(m.excluded) if m is not None else list(classes),
    }


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)


def _pct(x):
    return "n/a" if x is None else f"{100 * x:.2f}"


def format_table(rep: dict) -> str:
    rows = [
        ("IoU", rep["binary"]["iou"]),
        ("Precision (P)", rep["binary"]["precision"]),
        ("Recall (R)", rep["binary"]["recall"]),
        ("mIoU", rep["miou"]),
    ]
    lines = [f"{'Metric':<16}{'Value':>8}"]
    lines += [f"{name:<16}{_pct(v):>8}" for name, v in rows]
    return "\n".join(lines)
