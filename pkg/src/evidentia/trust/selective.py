"""Uncertainty as an error signal: rank tests and accuracy-rejection curves."""
import math
from itertools import combinations

import numpy as np
from scipy.stats import norm, rankdata

from evidentia.errors import ContractError
from evidentia.trust.records import CurveSeries, RecordSet

EXACT_MAX_N = 20
REJECTION_GRID = np.round(np.arange(20) * 0.05, 10)


def count_for_rate(rate, n):
    """ceil(rate * n), immune to float noise such as 0.15 * 100 = 15.000000000000002."""
    return min(n, int(math.ceil(round(rate * n, 9))))


def mann_whitney_greater(x, y):
    """One-sided Mann-Whitney test of H1: x tends to exceed y.

    Returns ``(U, p)`` with U the statistic of ``x``. Uses exact enumeration
    of all label assignments over the pooled midranks when the pooled size
    is at most 20, otherwise the normal approximation with tie and
    continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ContractError("Mann-Whitney test needs two nonempty groups")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    offset = n1 * (n1 + 1) / 2.0
    u = float(ranks[:n1].sum() - offset)
    n = n1 + n2
    if n <= EXACT_MAX_N:
        hits = total = 0
        for chosen in combinations(range(n), n1):
            total += 1
            if ranks[list(chosen)].sum() - offset >= u - 1e-9:
                hits += 1
        return u, hits / total
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    mean = n1 * n2 / 2.0
    if var <= 0:
        return u, 0.5 if u == mean else float(u < mean)
    z = (u - mean - 0.5) / math.sqrt(var)
    return u, float(norm.sf(z))


def uncertainty_separation(records):
    """Are misclassified records more epistemically uncertain than correct ones?"""
    rs = RecordSet.from_records(records)
    wrong = ~rs.correct
    if wrong.all() or not wrong.any():
        raise ContractError("separation test needs both correct and misclassified records")
    u, p = mann_whitney_greater(rs.epistemic[wrong], rs.epistemic[~wrong])
    return {
        "U": u,
        "p_value": p,
        "n_incorrect": int(wrong.sum()),
        "n_correct": int((~wrong).sum()),
        "median_incorrect": float(np.median(rs.epistemic[wrong])),
        "median_correct": float(np.median(rs.epistemic[~wrong])),
    }


def rejection_order(uncertainty):
    """Indices from most to least uncertain; ties go to the lower index first."""
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    return np.lexsort((np.arange(len(uncertainty)), -uncertainty))


def rejection_curve(records, grid=REJECTION_GRID, uncertainty=None):
    """Accuracy on the records left after rejecting the most uncertain fraction."""
    rs = RecordSet.from_records(records)
    if len(rs) == 0:
        raise ContractError("rejection curve needs at least one record")
    unc = rs.epistemic if uncertainty is None else np.asarray(uncertainty, dtype=np.float64)
    order = rejection_order(unc)
    correct = rs.correct[order]
    n = len(rs)
    acc = []
    for r in grid:
        k = count_for_rate(r, n)
        acc.append(float(correct[k:].mean()) if k < n else float("nan"))
    return CurveSeries(grid, acc)
