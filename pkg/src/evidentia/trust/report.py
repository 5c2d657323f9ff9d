"""Export of every trust analysis as CSV tables plus a combined JSON report."""
import csv
import json
import math
from pathlib import Path

import numpy as np

from evidentia.trust.binary import bootstrap_band, pr_curve, pr_statistic, reliability, roc, roc_statistic
from evidentia.trust.ordinal import confusion_matrix, error_distribution, ordinal_metrics, qwk
from evidentia.trust.records import CostParams, RecordSet, fmt
from evidentia.trust.selective import rejection_curve, uncertainty_separation
from evidentia.trust.utility import cost_profile, net_benefit

REPORT_FILES = (
    "confusion.csv", "metrics.json", "roc.csv", "pr.csv", "reliability.csv", "rejection.csv",
    "dca.csv", "cost_profile.csv", "ood.csv", "error_hist.csv",
)
OOD_COLUMNS = ("kind", "severity", "n", "mean_epistemic", "median_epistemic",
               "clean_mean_epistemic", "clean_median_epistemic", "U", "p_value")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _rounded(obj):
    """Round floats to the export precision; NaN/inf become null so the JSON stays strict."""
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj)) if math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_rounded(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _band_rows(curve):
    return zip(curve.x, curve.y, curve.lower, curve.upper)


def trust_report(records, out_dir, n_boot=1000, seed=0, costs=None, ood_rows=None):
    """Run every analysis on ``records`` and write the bundle into ``out_dir``.

    Returns the combined report dictionary (also written as ``report.json``).
    ``ood_rows`` comes from ``ood_report``; without it ``ood.csv`` holds only
    its header.
    """
    rs = RecordSet.from_records(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    costs = costs if costs is not None else CostParams()

    counts, normalized, empty_rows = confusion_matrix(rs)
    write_csv(out / "confusion.csv", ["true", "pred", "count", "row_fraction"],
              [(t, p, counts[t, p], normalized[t, p]) for t in range(5) for p in range(5)])

    offsets, hist = error_distribution(rs)
    write_csv(out / "error_hist.csv", ["offset", "count"], zip(offsets, hist))

    has_both = 0 < rs.oa_true.sum() < len(rs)
    binary = {}
    if has_both:
        r = roc(rs)
        lo, hi = bootstrap_band(rs, roc_statistic, n_boot=n_boot, seed=seed)
        r_curve = r.curve.with_band(lo, hi)
        auc_lo, auc_hi = bootstrap_band(rs, lambda s: roc(s).auc, n_boot=n_boot, seed=seed)
        write_csv(out / "roc.csv", ["fpr", "tpr", "tpr_lower", "tpr_upper"], _band_rows(r_curve))
        p = pr_curve(rs)
        lo, hi = bootstrap_band(rs, pr_statistic, n_boot=n_boot, seed=seed)
        p_curve = p.curve.with_band(lo, hi)
        ap_lo, ap_hi = bootstrap_band(rs, lambda s: pr_curve(s).average_precision, n_boot=n_boot, seed=seed)
        write_csv(out / "pr.csv", ["recall", "precision", "precision_lower", "precision_upper"],
                  _band_rows(p_curve))
        binary = {"auroc": r.auc, "auroc_ci": [min(auc_lo, r.auc), max(auc_hi, r.auc)],
                  "ap": p.average_precision,
                  "ap_ci": [min(ap_lo, p.average_precision), max(ap_hi, p.average_precision)]}
    else:
        # single-class OA endpoint: curves are undefined, keep the headers
        write_csv(out / "roc.csv", ["fpr", "tpr", "tpr_lower", "tpr_upper"], [])
        write_csv(out / "pr.csv", ["recall", "precision", "precision_lower", "precision_upper"], [])
        binary = {"auroc": None, "auroc_ci": None, "ap": None, "ap_ci": None}

    rel = reliability(rs)
    used = rel.bin_counts > 0
    write_csv(out / "reliability.csv", ["bin_lower", "bin_upper", "count", "mean_prob", "observed_freq"],
              zip(rel.bin_edges[:-1][used], rel.bin_edges[1:][used], rel.bin_counts[used],
                  rel.curve.x, rel.curve.y))

    rej = rejection_curve(rs)
    oracle = rejection_curve(rs, uncertainty=(~rs.correct).astype(np.float64))
    write_csv(out / "rejection.csv", ["rate", "accuracy", "oracle_accuracy"], zip(rej.x, rej.y, oracle.y))

    dca = net_benefit(rs)
    write_csv(out / "dca.csv", ["threshold", "model", "treat_all", "treat_none"],
              zip(dca["model"].x, dca["model"].y, dca["treat_all"].y, dca["treat_none"].y))

    cost = cost_profile(rs, costs)
    write_csv(out / "cost_profile.csv", ["referral_rate", "cost_per_patient"], zip(cost.x, cost.y))

    ood_rows = list(ood_rows or [])
    write_csv(out / "ood.csv", OOD_COLUMNS, ([row[c] for c in OOD_COLUMNS] for row in ood_rows))

    wrong = ~rs.correct
    separation = uncertainty_separation(rs) if 0 < wrong.sum() < len(rs) else None
    ordinal = ordinal_metrics(rs)
    metrics = {
        "n": len(rs),
        "accuracy": ordinal["accuracy"],
        "qwk": qwk(rs.y_true, rs.grade_pred) if len(rs) >= 2 else None,
        "macro_f1": ordinal["macro_f1"],
        "recall": ordinal["recall"],
        "mse": ordinal["mse"],
        "per_class_f1": ordinal["per_class_f1"],
        "excluded_classes": ordinal["excluded_classes"],
        "empty_confusion_rows": empty_rows,
        **binary,
        "ece": rel.ece,
        "brier": rel.brier,
        "separation": separation,
        "rejection_gain_at_0.3": float(rej.y[6] - rej.y[0]) if len(rej.y) > 6 else None,
        "cost_at_0": float(cost.y[0]),
        "cost_min": float(cost.y.min()),
        "cost_argmin": float(cost.x[int(np.argmin(cost.y))]),
        "cost_at_1": float(cost.y[-1]),
        "bootstrap": {"n_boot": n_boot, "seed": seed, "level": 0.95},
    }
    write_json(out / "metrics.json", metrics)
    report = {
        "metrics": metrics,
        "rejection": {"rate": rej.x.tolist(), "accuracy": rej.y.tolist(), "oracle_accuracy": oracle.y.tolist()},
        "cost_profile": {"referral_rate": cost.x.tolist(), "cost": cost.y.tolist()},
        "costs": vars(costs),
        "ood": ood_rows,
    }
    write_json(out / "report.json", report)
    return _rounded(report)


def write_attention(path, ids, alpha_m, alpha_lat):
    """One row per (sample, branch) with the flattened attention grid."""
    h, w = alpha_m.shape[1:]
    header = ["id", "branch"] + [f"a{r}_{c}" for r in range(h) for c in range(w)]
    rows = []
    for i, sid in enumerate(ids):
        rows.append([sid, "medial", *alpha_m[i].ravel()])
        rows.append([sid, "lateral", *alpha_lat[i].ravel()])
    write_csv(path, header, rows)
