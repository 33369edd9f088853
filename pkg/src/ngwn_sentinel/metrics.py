"""Confusion-matrix metrics and ROC curves for binary attack detection."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class OneClass(ValueError):
    pass


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


@dataclass(frozen=True)
class MetricsReport:
    """Counts and rates; a rate is ``None`` (reported NA) when its denominator is 0."""

    tp: int
    fp: int
    tn: int
    fn: int
    detection_rate: float | None
    accuracy: float | None
    fnr: float | None
    fpr: float | None
    precision: float | None
    recall: float | None
    auc: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def confusion(truth: Sequence[int], flagged: Sequence[int]) -> tuple[int, int, int, int]:
    t = np.asarray(truth, dtype=bool)
    f = np.asarray(flagged, dtype=bool)
    if t.shape != f.shape:
        raise ValueError("truth and decisions differ in length")
    return (int(np.sum(t & f)), int(np.sum(~t & f)), int(np.sum(~t & ~f)), int(np.sum(t & ~f)))


def compute_metrics(truth: Sequence[int], flagged: Sequence[int],
                    scores: Sequence[float] | None = None) -> MetricsReport:
    tp, fp, tn, fn = confusion(truth, flagged)
    auc = None
    if scores is not None:
        try:
            auc = roc_curve(scores, truth)[1]
        except OneClass:
            auc = None
    return MetricsReport(
        tp, fp, tn, fn,
        detection_rate=_ratio(tp, tp + fn),
        accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        fnr=_ratio(fn, tp + fn),
        fpr=_ratio(fp, fp + tn),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        auc=auc,
    )


def roc_curve(scores: Sequence[float], truth: Sequence[int]) -> tuple[np.ndarray, float]:
    """ROC points (fpr, tpr) sweeping the threshold down through distinct scores.

    Tied scores move together, so constant scores give the diagonal and AUC 0.5.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if s.shape != t.shape:
        raise ValueError("scores and truth differ in length")
    P, N = int(t.sum()), int((~t).sum())
    if P == 0 or N == 0:
        raise OneClass("ROC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(t)[last]
    fps = np.cumsum(~t)[last]
    pts = np.column_stack([np.r_[0, fps / N], np.r_[0, tps / P]])
    auc = float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))
    return pts, auc


def format_value(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)
