"""ROC curves, the area quality measure, and farthest-from-diagonal thresholds.

Curves are computed on the linear-predictor scale: scoring never
materializes probabilities, and ROC is invariant under any strictly
increasing transform, so the eta-scale and probability-scale curves agree.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO, Sequence

from .model_core import BinaryModel, linear_predictor
from .dataset import LabeledSet


class DegenerateCalibrationError(Exception):
    """Calibration set contains a single class; no curve exists."""


@dataclass(frozen=True)
class RocPoint:
    fp_rate: float
    tp_rate: float
    cut: float  # eta-scale threshold; this point = accept scores strictly above it


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    auc: float

    @property
    def area_above_diagonal(self) -> float:
        return self.auc - 0.5

    def __post_init__(self) -> None:
        first, last = self.points[0], self.points[-1]
        if (first.fp_rate, first.tp_rate) != (0.0, 0.0):
            raise ValueError("curve must start at (0, 0)")
        if (last.fp_rate, last.tp_rate) != (1.0, 1.0):
            raise ValueError("curve must end at (1, 1)")
        for a, b in zip(self.points, self.points[1:]):
            if b.cut >= a.cut:
                raise ValueError("cuts must be strictly decreasing")
            if b.fp_rate < a.fp_rate or b.tp_rate < a.tp_rate:
                raise ValueError("rates must be non-decreasing as the cut drops")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc out of [0,1]: {self.auc}")


@dataclass(frozen=True)
class ThresholdChoice:
    cut: float
    tp_rate: float
    fp_rate: float

    @property
    def youden(self) -> float:
        return self.tp_rate - self.fp_rate

    def to_json(self) -> str:
        doc = {
            "cut": self.cut,
            "tp_rate": self.tp_rate,
            "fp_rate": self.fp_rate,
            "youden": self.youden,
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def roc_from_scores(
    positive_scores: Sequence[float], negative_scores: Sequence[float]
) -> RocCurve:
    """Curve over every distinct score, ties collapsed, trapezoidal area.

    Rates at a distinct score s count items scoring >= s, per the sweep from
    the largest score down.  Each point's stored cut is the strict-acceptance
    threshold realizing that operating set: the midpoint below s (one less
    than the minimum for the accept-everything point), so any cut in the
    curve is finite and directly usable as a model threshold.
    """
    n_pos, n_neg = len(positive_scores), len(negative_scores)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateCalibrationError(
            f"need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    counts: dict[float, list[int]] = {}
    for s in positive_scores:
        counts.setdefault(float(s), [0, 0])[0] += 1
    for s in negative_scores:
        counts.setdefault(float(s), [0, 0])[1] += 1
    distinct = sorted(counts, reverse=True)

    points = [RocPoint(fp_rate=0.0, tp_rate=0.0, cut=distinct[0])]
    tp = fp = 0
    for k, s in enumerate(distinct):
        tp += counts[s][0]
        fp += counts[s][1]
        cut = (s + distinct[k + 1]) / 2.0 if k + 1 < len(distinct) else s - 1.0
        points.append(RocPoint(fp_rate=fp / n_neg, tp_rate=tp / n_pos, cut=cut))

    auc = 0.0
    for a, b in zip(points, points[1:]):
        auc += (b.fp_rate - a.fp_rate) * (b.tp_rate + a.tp_rate) / 2.0
    return RocCurve(points=tuple(points), auc=auc)


def roc(model: BinaryModel, calib: LabeledSet) -> RocCurve:
    pos, neg = [], []
    for imp, label in calib.rows:
        (pos if label == 1 else neg).append(linear_predictor(model, imp))
    return roc_from_scores(pos, neg)


def select_threshold(curve: RocCurve) -> ThresholdChoice:
    """Point maximizing tp_rate - fp_rate, the farthest from the chance diagonal.

    The perpendicular distance to the diagonal is (tp - fp) / sqrt(2), so the
    same point maximizes both.  Ties break toward the smaller fp_rate.
    """
    best = max(
        curve.points,
        key=lambda p: (p.tp_rate - p.fp_rate, -p.fp_rate, p.cut),
    )
    return ThresholdChoice(cut=best.cut, tp_rate=best.tp_rate, fp_rate=best.fp_rate)


def model_sort_key(model: BinaryModel, calib: LabeledSet) -> tuple:
    """Orders models best-first: larger AUC, then fewer features, then name."""
    auc = roc(model, calib).auc
    names = tuple(
        f"{dim}={lvl}" for dim, lvl in sorted(model.feature_index.levels)
    )
    return (-auc, model.n_betas, names)


def compare(m0: BinaryModel, m1: BinaryModel, calib: LabeledSet) -> int:
    """-1 when m0 ranks strictly better than m1 on the shared calibration set,
    +1 when worse, 0 on a full tie (equal AUC, feature count and feature names)."""
    k0, k1 = model_sort_key(m0, calib), model_sort_key(m1, calib)
    return -1 if k0 < k1 else (1 if k0 > k1 else 0)


def export_curve_csv(curve: RocCurve, sink: IO[str]) -> None:
    """CSV of (cut, fp_rate, tp_rate) for plotting."""
    writer = csv.writer(sink)
    writer.writerow(["cut", "fp_rate", "tp_rate"])
    for p in curve.points:
        writer.writerow([repr(p.cut), repr(p.fp_rate), repr(p.tp_rate)])
