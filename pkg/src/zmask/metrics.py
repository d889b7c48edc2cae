"""Segmentation and masking quality metrics."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def confusion_matrix(
    pred: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Class confusion counts, optionally ignoring pixels where exclude == 1."""
    pred = np.asarray(pred).ravel()
    labels = np.asarray(labels).ravel()
    if pred.shape != labels.shape:
        raise DataError(f"prediction/label size mismatch: {pred.shape} vs {labels.shape}")
    if exclude is not None:
        keep = np.asarray(exclude).ravel() == 0
        pred, labels = pred[keep], labels[keep]
    idx = labels * n_classes + pred
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def miou_from_confusion(cm: np.ndarray) -> float:
    """Mean IoU over classes that appear in labels or predictions."""
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    present = denom > 0
    if not present.any():
        raise DataError("confusion matrix is empty")
    return float((tp[present] / denom[present]).mean())


def miou(
    preds,
    labels,
    n_classes: int,
    exclude_masks=None,
) -> float:
    """Dataset-level mean IoU, excluding per-image masked pixels when given."""
    preds, labels = list(preds), list(labels)
    if len(preds) != len(labels):
        raise DataError("prediction and label sets are misaligned")
    if exclude_masks is not None and len(exclude_masks) != len(preds):
        raise DataError("exclusion mask set is misaligned")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i, (p, y) in enumerate(zip(preds, labels)):
        ex = exclude_masks[i] if exclude_masks is not None else None
        cm += confusion_matrix(p, y, n_classes, ex)
    return miou_from_confusion(cm)


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two binary masks; defined as 1.0 when both are empty."""
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    if a.shape != b.shape:
        raise DataError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def detection_rates(scores, labels, threshold: float) -> tuple[float, float]:
    """(TPR, FPR) of the rule score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = labels == 1
    neg = labels == 0
    if not pos.any() or not neg.any():
        raise DataError("detection rates need both classes")
    return (
        float((scores[pos] > threshold).mean()),
        float((scores[neg] > threshold).mean()),
    )
