"""Binary OA endpoint (grade >= 2): ROC, precision-recall, bootstrap bands, calibration."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from evidentia.errors import ContractError
from evidentia.trust.records import CurveSeries, RecordSet

GRID = np.linspace(0.0, 1.0, 101)


def worker_count():
    try:
        return max(1, int(os.environ.get("EVIDENTIA_THREADS", "1")))
    except ValueError:
        return 1


def _labels_scores(records, score="prob_oa"):
    rs = RecordSet.from_records(records)
    return rs.oa_true, getattr(rs, score)


def _threshold_counts(labels, scores):
    """Cumulative TP/FP counts as the threshold sweeps down through distinct scores."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pos = labels[order].astype(np.float64)
    tps = np.cumsum(pos)
    fps = np.cumsum(1.0 - pos)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    return tps[last], fps[last], s[last]


@dataclass
class RocResult:
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    curve: CurveSeries  # TPR on the fixed 101-point FPR grid


def _roc_points(labels, scores):
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC needs both OA-positive and OA-negative records")
    tps, fps, thr = _threshold_counts(labels, scores)
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return fpr, tpr, np.r_[np.inf, thr]


def _interp_roc(fpr, tpr, grid=GRID):
    # at a vertical segment keep its top, i.e. the last point for each FPR value
    keep = np.r_[np.diff(fpr) > 0, True]
    return np.interp(grid, fpr[keep], tpr[keep])


def roc(records, score="prob_oa"):
    """ROC of the OA endpoint; AUC by the trapezoid rule over all thresholds."""
    labels, scores = _labels_scores(records, score)
    fpr, tpr, thr = _roc_points(labels, scores)
    auc = float(np.trapezoid(tpr, fpr))
    return RocResult(auc, fpr, tpr, thr, CurveSeries(GRID, _interp_roc(fpr, tpr)))


def mann_whitney_auc(labels, scores):
    """AUC as U / (n_pos n_neg) from midranks."""
    from scipy.stats import rankdata

    labels = np.asarray(labels, dtype=bool)
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class PrResult:
    average_precision: float
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    curve: CurveSeries  # interpolated precision on the fixed 101-point recall grid


def _pr_points(labels, scores):
    n_pos = labels.sum()
    if n_pos == 0:
        raise ContractError("PR curve needs at least one OA-positive record")
    tps, fps, thr = _threshold_counts(labels, scores)
    precision = tps / (tps + fps)
    recall = tps / n_pos
    return precision, recall, thr


def _interp_precision(precision, recall, grid=GRID):
    # interpolated precision: best precision achievable at recall >= r
    best = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, grid, side="left")
    out = np.zeros_like(grid)
    ok = idx < len(recall)
    out[ok] = best[idx[ok]]
    return out


def pr_curve(records, score="prob_oa"):
    """Precision/recall sweep; AP = sum over thresholds of (R_k - R_{k-1}) P_k."""
    labels, scores = _labels_scores(records, score)
    precision, recall, thr = _pr_points(labels, scores)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PrResult(ap, precision, recall, thr, CurveSeries(GRID, _interp_precision(precision, recall)))


def roc_statistic(records):
    return roc(records).curve.y


def pr_statistic(records):
    return pr_curve(records).curve.y


def bootstrap_band(records, statistic, n_boot=1000, level=0.95, seed=0, require_both_classes=True):
    """Percentile band of ``statistic`` over bootstrap resamples.

    ``statistic`` maps a RecordSet to a scalar or to a curve already on a
    fixed grid. Resamples missing a class (when required) are redrawn; at
    most 10 * n_boot draws are attempted. Returns ``(lower, upper)``.
    """
    if n_boot < 100:
        raise ContractError("bootstrap needs at least 100 resamples")
    rs = RecordSet.from_records(records)
    n = len(rs)
    labels = rs.oa_true
    children = np.random.SeedSequence(seed).spawn(n_boot)

    def replicate(i):
        rng = np.random.default_rng(children[i])
        for attempt in range(10):
            idx = rng.integers(0, n, size=n)
            if not require_both_classes or 0 < labels[idx].sum() < n:
                return np.asarray(statistic(rs.take(idx)), dtype=np.float64), attempt + 1
        return None, 10

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(replicate, range(n_boot)))
    else:
        results = [replicate(i) for i in range(n_boot)]
    draws = sum(r[1] for r in results)
    stats = [r[0] for r in results if r[0] is not None]
    if len(stats) < n_boot or draws > 10 * n_boot:
        raise ContractError("bootstrap could not draw enough resamples containing both classes")
    stats = np.stack(stats)
    tail = (1.0 - level) / 2.0 * 100.0
    lower = np.percentile(stats, tail, axis=0)
    upper = np.percentile(stats, 100.0 - tail, axis=0)
    return lower, upper


@dataclass
class ReliabilityResult:
    curve: CurveSeries  # nonempty bins: mean prob_oa (x) against observed OA frequency (y)
    ece: float
    brier: float
    bin_counts: np.ndarray
    bin_edges: np.ndarray


def reliability(records, bins=10):
    """Equal-width calibration bins on prob_oa, with ECE and Brier score."""
    rs = RecordSet.from_records(records)
    if len(rs) == 0:
        raise ContractError("reliability needs at least one record")
    p = rs.prob_oa
    y = rs.oa_true.astype(np.float64)
    edges = np.arange(bins + 1) / bins  # k / bins exactly; linspace drifts by an ulp
    which = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    conf = np.bincount(which, weights=p, minlength=bins)
    freq = np.bincount(which, weights=y, minlength=bins)
    used = counts > 0
    conf = conf[used] / counts[used]
    freq = freq[used] / counts[used]
    ece = float(np.sum(counts[used] / len(rs) * np.abs(conf - freq)))
    brier = float(np.mean((p - y) ** 2))
    # bins are disjoint, so mean confidences are strictly increasing
    return ReliabilityResult(CurveSeries(conf, freq), ece, brier, counts, edges)
