"""ROC sweep, AUC, and detection-threshold selection.

Operating points come from sweeping every distinct score; reported
thresholds sit at midpoints between consecutive distinct scores (plus
sentinels beyond both ends) so the selected cut-off lands strictly between
the classes when they separate. The flag rule everywhere is score > threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class RocCurve:
    """Threshold-ascending operating points; endpoints (1,1) and (0,0) included."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def rows(self):
        return zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist())


def roc_curve(scores, labels) -> RocCurve:
    """ROC over d-scores with labels 0 (clean) / 1 (patched); AUC by trapezoid."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be matching 1-d sequences")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")

    distinct = np.unique(scores)
    thresholds = np.concatenate(
        [[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1]]]
    )
    tpr = np.empty_like(thresholds)
    fpr = np.empty_like(thresholds)
    pos_scores = scores[labels == 1]
    neg_scores = scores[labels == 0]
    for i, t in enumerate(thresholds):
        tpr[i] = (pos_scores > t).sum() / n_pos
        fpr[i] = (neg_scores > t).sum() / n_neg

    # Threshold-ascending means FPR-descending; integrate in FPR order.
    auc = float(np.trapezoid(tpr[::-1], fpr[::-1]))
    return RocCurve(thresholds, tpr, fpr, auc)


def youden_cutoff(curve: RocCurve) -> float:
    """Threshold maximizing TPR - FPR; ties resolve to the smaller threshold."""
    j = curve.tpr - curve.fpr
    best = int(np.argmax(j))  # first (= smallest threshold) among maxima
    return float(curve.thresholds[best])


def roc_and_cutoff(scores, labels) -> tuple[RocCurve, float]:
    """Full ROC plus the detection threshold."""
    curve = roc_curve(scores, labels)
    return curve, youden_cutoff(curve)
