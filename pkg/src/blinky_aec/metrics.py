"""Per-class precision/recall/F1 and macro-F1."""

from __future__ import annotations

import numpy as np


def confusion_matrix(truths, predictions, n_classes: int) -> np.ndarray:
    t = np.asarray(truths, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= n_classes or p.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_scores(truths, predictions, n_classes: int):
    """(precision, recall, f1) arrays; 0/0 is scored as 0."""
    cm = confusion_matrix(truths, predictions, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros(n_classes), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros(n_classes), where=true_pos > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    return precision, recall, f1


def macro_f1(truths, predictions, n_classes: int) -> float:
    return float(np.mean(per_class_scores(truths, predictions, n_classes)[2]))
