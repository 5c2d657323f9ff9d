"""Epistemic uncertainty under corruption and distribution shift."""
import numpy as np

from evidentia.model.synthetic import CORRUPTIONS, corrupt
from evidentia.model.training import predict
from evidentia.seeding import derive_seed
from evidentia.trust.selective import mann_whitney_greater


def corrupted_sets(images, seed, grid=CORRUPTIONS, include_identity=True):
    """{(kind, severity): images} over the full severity grid."""
    sets = {}
    if include_identity:
        sets[("identity", 0)] = np.asarray(images, dtype=np.float64).copy()
    for kind, severities in grid.items():
        for s in severities:
            sets[(kind, s)] = corrupt(images, kind, s, seed=derive_seed(seed, f"ood:{kind}:{s}"))
    return sets


def ood_report(checkpoint, clean_images, corrupted):
    """One row per corruption cell comparing epistemic uncertainty against the clean set."""
    clean = predict(checkpoint, clean_images)["epistemic"]
    rows = []
    for (kind, severity), images in corrupted.items():
        epi = predict(checkpoint, images)["epistemic"]
        u, p = mann_whitney_greater(epi, clean)
        rows.append({
            "kind": kind,
            "severity": severity,
            "n": len(epi),
            "mean_epistemic": float(epi.mean()),
            "median_epistemic": float(np.median(epi)),
            "clean_mean_epistemic": float(clean.mean()),
            "clean_median_epistemic": float(np.median(clean)),
            "U": u,
            "p_value": p,
        })
    return rows


def noise_trend(rows):
    """Whether mean epistemic is nondecreasing across gaussian-noise severities (reported only)."""
    noise = sorted((r["severity"], r["mean_epistemic"]) for r in rows if r["kind"] == "gaussian-noise")
    means = [m for _, m in noise]
    return all(b >= a for a, b in zip(means, means[1:]))
