"""Decision-curve analysis and uncertainty-guided referral cost."""
import numpy as np

from evidentia.errors import ContractError
from evidentia.trust.records import CostParams, CurveSeries, RecordSet
from evidentia.trust.selective import count_for_rate, rejection_order

DCA_GRID = np.round(np.arange(1, 100) * 0.01, 10)
REFERRAL_GRID = np.round(np.arange(21) * 0.05, 10)


def net_benefit(records, thresholds=DCA_GRID):
    """Net benefit of treating when prob_oa >= t, against treat-all and treat-none.

    Returns ``{"model", "treat_all", "treat_none"}`` curves over ``thresholds``.
    """
    rs = RecordSet.from_records(records)
    t = np.asarray(thresholds, dtype=np.float64)
    if len(rs) == 0:
        raise ContractError("net benefit needs at least one record")
    if np.any((t <= 0) | (t >= 1)):
        raise ContractError("decision thresholds must lie strictly between 0 and 1")
    n = len(rs)
    pos = rs.oa_true
    odds = t / (1.0 - t)
    treat = rs.prob_oa[None, :] >= t[:, None]
    tp = (treat & pos[None, :]).sum(axis=1)
    fp = (treat & ~pos[None, :]).sum(axis=1)
    model = tp / n - fp / n * odds
    prevalence = pos.mean()
    return {
        "model": CurveSeries(t, model),
        "treat_all": CurveSeries(t, prevalence - (1.0 - prevalence) * odds),
        "treat_none": CurveSeries(t, np.zeros_like(t)),
    }


def cost_profile(records, costs=None, grid=REFERRAL_GRID):
    """Expected cost per patient when the most uncertain fraction goes to a clinician.

    Referred records cost a clinician review and, at the default zero
    clinician error rate, carry no misclassification penalty. The rest cost
    the AI fee plus a false-negative or false-positive penalty on the OA
    endpoint.
    """
    rs = RecordSet.from_records(records)
    costs = costs if costs is not None else CostParams()
    grid = np.asarray(grid, dtype=np.float64)
    if np.any((grid < 0) | (grid > 1)):
        raise ContractError("referral rates must lie in [0, 1]")
    n = len(rs)
    if n == 0:
        raise ContractError("cost profile needs at least one record")
    order = rejection_order(rs.epistemic)
    pos, pred = rs.oa_true[order], rs.oa_pred[order]
    fn = (pos & ~pred).astype(np.float64)
    fp = (~pos & pred).astype(np.float64)
    # what the remaining records cost if left to the AI, for each split point
    ai_penalty_tail = np.r_[np.cumsum((costs.fn_penalty * fn + costs.fp_penalty * fp)[::-1])[::-1], 0.0]
    referred_pos = np.r_[0.0, np.cumsum(pos)]
    out = []
    for r in grid:
        k = count_for_rate(r, n)
        clinician_penalty = costs.clinician_error * (
            costs.fn_penalty * referred_pos[k] + costs.fp_penalty * (k - referred_pos[k])
        )
        total = costs.review * k + costs.ai * (n - k) + ai_penalty_tail[k] + clinician_penalty
        out.append(total / n)
    return CurveSeries(grid, out)
