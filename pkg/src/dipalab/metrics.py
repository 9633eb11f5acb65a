"""Confusion-matrix metrics: accuracy, Cohen's kappa, macro-F1.

Rows are true classes, columns predicted classes. Kappa and F1 are
evaluated in integer arithmetic up to a single final division, so
hand-checkable cases come out exact.
"""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred, labels=None) -> tuple[np.ndarray, list[int]]:
    """Counts over ``labels`` (default: sorted union of true and predicted classes)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if labels is None:
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    labels = [int(c) for c in labels]
    index = {c: i for i, c in enumerate(labels)}
    try:
        rows = np.array([index[c] for c in y_true.tolist()], dtype=np.int64)
        cols = np.array([index[c] for c in y_pred.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} not in the label set") from None
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(cm, (rows, cols), 1)
    return cm, labels


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ValueError("confusion matrix must be square and non-empty")
    if np.any(cm < 0):
        raise ValueError("confusion matrix entries must be non-negative")
    if cm.sum() == 0:
        raise ValueError("confusion matrix has no samples")
    return cm.astype(np.int64)


def accuracy(cm) -> float:
    cm = _check(cm)
    return int(np.trace(cm)) / int(cm.sum())


def cohen_kappa(cm) -> float:
    """(p_o - p_e) / (1 - p_e); 0 when the marginals make p_e = 1."""
    cm = _check(cm)
    n = int(cm.sum())
    chance = int(np.dot(cm.sum(axis=1), cm.sum(axis=0)))
    denom = n * n - chance
    if denom == 0:
        return 0.0
    return (n * int(np.trace(cm)) - chance) / denom


def per_class_f1(cm) -> np.ndarray:
    """2TP / (2TP + FP + FN); classes with TP = FP = FN = 0 score 0."""
    cm = _check(cm)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    out = np.zeros(cm.shape[0])
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def macro_f1(cm) -> float:
    cm = _check(cm)
    f1 = per_class_f1(cm)
    return float(np.sum(f1) / f1.size)


def summarize(cm) -> dict[str, float]:
    return {"accuracy": accuracy(cm), "kappa": cohen_kappa(cm), "macro_f1": macro_f1(cm)}
