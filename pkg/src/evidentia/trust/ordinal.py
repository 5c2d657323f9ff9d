"""Ordinal grading metrics: confusion matrix, accuracy/F1/MSE, QWK, error histogram."""
import numpy as np

from evidentia.errors import ContractError
from evidentia.trust.records import NUM_GRADES, RecordSet


def _nonempty(records):
    rs = RecordSet.from_records(records)
    if len(rs) == 0:
        raise ContractError("analysis needs at least one record")
    return rs


def confusion_matrix(records):
    """Counts[true][pred] plus the row-normalized matrix.

    Returns ``(counts, normalized, empty_rows)``; rows without support are
    left as zeros and listed in ``empty_rows``.
    """
    rs = _nonempty(records)
    counts = np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64)
    np.add.at(counts, (rs.y_true, rs.grade_pred), 1)
    support = counts.sum(axis=1)
    normalized = np.zeros((NUM_GRADES, NUM_GRADES))
    has = support > 0
    normalized[has] = counts[has] / support[has, None]
    return counts, normalized, [int(k) for k in np.flatnonzero(~has)]


def ordinal_metrics(records):
    rs = _nonempty(records)
    counts, _, _ = confusion_matrix(rs)
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    present = support > 0
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        "accuracy": float(np.mean(rs.correct)),
        "macro_f1": float(f1[present].mean()),
        "recall": float(recall[present].mean()),
        "mse": float(np.mean((rs.gamma - rs.y_true) ** 2)),
        "per_class_f1": {int(k): float(f1[k]) for k in np.flatnonzero(present)},
        "excluded_classes": [int(k) for k in np.flatnonzero(~present)],
    }


def qwk(y_true, y_pred, num_classes=NUM_GRADES):
    """Quadratic weighted Cohen's kappa."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"qwk: length mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size < 2:
        raise ContractError("qwk needs at least two ratings")
    for v in (y_true, y_pred):
        if np.any((v < 0) | (v >= num_classes)):
            raise ContractError(f"qwk labels must lie in 0..{num_classes - 1}")
    n = y_true.size
    observed = np.zeros((num_classes, num_classes))
    np.add.at(observed, (y_true, y_pred), 1.0)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    idx = np.arange(num_classes)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (num_classes - 1) ** 2
    denom = (weights * expected).sum()
    if denom == 0:
        # both raters put everything on one identical label
        return 1.0
    return float(1.0 - (weights * observed).sum() / denom)


def error_distribution(records):
    """Counts of (pred - true) for offsets -4..4, returned as (offsets, counts)."""
    rs = RecordSet.from_records(records)
    offsets = np.arange(-(NUM_GRADES - 1), NUM_GRADES)
    counts = np.bincount(rs.grade_pred - rs.y_true + NUM_GRADES - 1, minlength=len(offsets))
    return offsets, counts
