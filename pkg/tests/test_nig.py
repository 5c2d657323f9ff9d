import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from evidentia import nig
from evidentia.diffcore import Tape, Tensor, check_gradients
from evidentia.errors import ContractError, DomainError
from evidentia.nig import NigParams, NigPrior
from oracles import (
    NLL_GRID,
    kl_gaussian_monte_carlo,
    kl_invgamma_quadrature,
    kl_nig_monte_carlo,
    marginal_nll_quadrature,
)

valid = st.tuples(
    st.floats(-3, 5), st.floats(0.05, 20), st.floats(1.05, 10), st.floats(0.05, 10)
)


def random_params(rng):
    return (rng.uniform(-2, 5), rng.uniform(0.05, 10), rng.uniform(1.1, 8), rng.uniform(0.1, 6))


# activation


def test_activate_zero_logits():
    p = nig.activate(np.zeros(4))
    ln2 = math.log(2)
    np.testing.assert_allclose([p.gamma, p.nu, p.alpha, p.beta], [0, ln2 + 1e-6, ln2 + 1 + 1e-6, ln2 + 1e-6])


def test_activate_saturated_logits():
    p = nig.activate(np.array([2.5, -50, -50, -50]))
    assert p.gamma == 2.5
    assert p.nu == pytest.approx(1e-6, rel=1e-9)
    assert p.alpha == pytest.approx(1 + 1e-6, rel=1e-12)
    assert p.beta == pytest.approx(1e-6, rel=1e-9)


def test_activate_positive_logits():
    p = nig.activate(np.array([-1.0, 3.0, 3.0, 3.0]))
    sp3 = math.log1p(math.exp(3.0))
    assert sp3 == pytest.approx(3.0486, abs=1e-4)
    np.testing.assert_allclose([p.nu, p.alpha, p.beta], [sp3 + 1e-6, sp3 + 1 + 1e-6, sp3 + 1e-6], rtol=1e-14)


@settings(max_examples=100)
@given(st.lists(st.floats(-60, 60), min_size=4, max_size=4))
def test_activate_always_valid(raw):
    p = nig.activate(np.array(raw))
    assert p.nu > 0 and p.alpha > 1 and p.beta > 0


def test_activate_rejects_bad_input():
    with pytest.raises(ContractError):
        nig.activate(np.zeros(3))
    with pytest.raises(ContractError):
        nig.activate(np.array([0.0, np.nan, 0.0, 0.0]))


# likelihood


def test_nll_reference_value():
    assert nig.nll(NigParams(0.0, 1.0, 2.0, 1.0), 0.0) == pytest.approx(0.980829, abs=1e-6)
    assert marginal_nll_quadrature(0.0, 1.0, 2.0, 1.0, 0.0) == pytest.approx(0.980829, abs=1e-6)


def test_nll_matches_quadrature_marginal_on_grid():
    worst = max(abs(nig.nll(NigParams(g, nu, a, b), y) - marginal_nll_quadrature(g, nu, a, b, y))
                for g, nu, a, b, y in NLL_GRID)
    assert len(NLL_GRID) == 405
    assert worst <= 1e-5


@given(valid, st.floats(-0.5, 0.5).filter(lambda d: abs(d) > 1e-6))
def test_nll_minimized_at_location(p, delta):
    p = NigParams(*p)
    assert nig.nll(p, p.gamma) < nig.nll(p, p.gamma + delta)


@given(valid, st.floats(-10, 10))
def test_nll_equals_negative_predictive_logpdf(p, y):
    p = NigParams(*p)
    assert nig.nll(p, y) == pytest.approx(-nig.predictive_logpdf(p, y), abs=1e-10)


def test_predictive_density_integrates_to_one():
    p = NigParams(0.5, 2.0, 3.0, 1.5)
    total, _ = integrate.quad(lambda y: math.exp(nig.predictive_logpdf(p, y)), -50, 50, epsabs=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_predictive_symmetric_and_peaked_at_location():
    p = NigParams(0.0, 1.0, 2.0, 1.0)
    ys = np.linspace(-3, 3, 61)
    dens = nig.predictive_logpdf(p, ys)
    np.testing.assert_allclose(dens, dens[::-1], atol=1e-14)
    assert ys[np.argmax(dens)] == 0.0


def test_nll_rejects_invalid_params():
    with pytest.raises(ContractError):
        nig.nll(NigParams(0.0, -1.0, 2.0, 1.0), 0.0)
    with pytest.raises(ContractError):
        nig.nll(NigParams(0.0, 1.0, 1.0, 1.0), 0.0)


# KL terms


def test_expected_gaussian_kl_reference():
    # E[1/s] = alpha / beta = 0.5 with nu = nu0 = 1
    p = NigParams(1.0, 1.0, 2.0, 4.0)
    q = NigParams(0.0, 1.0, 2.0, 4.0)
    assert nig.kl_gaussian_expected(p, q) == pytest.approx(0.25, abs=1e-15)


def test_expected_gaussian_kl_zero_for_same_conditional():
    p = NigParams(1.3, 0.7, 2.0, 4.0)
    assert nig.kl_gaussian_expected(p, NigParams(1.3, 0.7, 5.0, 1.0)) == 0.0


def test_kl_invgamma_identical_is_zero():
    assert nig.kl_invgamma(2, 3, 2, 3) == 0.0


def test_kl_invgamma_reference_pair():
    # closed form and quadrature agree on 0.1159315...; see the decisions ledger
    value = nig.kl_invgamma(3.0, 2.0, 2.0, 1.0)
    assert value == pytest.approx(kl_invgamma_quadrature(3.0, 2.0, 2.0, 1.0), abs=1e-9)
    assert value == pytest.approx(0.1159315157, abs=1e-9)


def test_kl_invgamma_matches_quadrature_on_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, a0 = rng.uniform(1.01, 8, size=2)
        b, b0 = rng.uniform(0.2, 6, size=2)
        closed = nig.kl_invgamma(a, b, a0, b0)
        assert closed >= 0
        assert closed == pytest.approx(kl_invgamma_quadrature(a, b, a0, b0), abs=1e-6)


def test_kl_invgamma_domain():
    with pytest.raises(DomainError):
        nig.kl_invgamma(0.0, 1.0, 1.0, 1.0)


def test_kl_nig_self_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = NigParams(*random_params(rng))
        assert abs(nig.kl_nig(p, p)) <= 1e-12


def test_kl_nig_decomposition_is_exact():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, q = NigParams(*random_params(rng)), NigParams(*random_params(rng))
        parts = nig.kl_invgamma(p.alpha, p.beta, q.alpha, q.beta) + nig.kl_gaussian_expected(p, q)
        assert nig.kl_nig(p, q) == parts


def _mc_pair(rng):
    # keep alpha >= 2.5 so the log-density ratio has finite variance
    p = (rng.uniform(-1, 3), rng.uniform(0.3, 5), rng.uniform(2.5, 6), rng.uniform(0.5, 3))
    q = (rng.uniform(-1, 3), rng.uniform(0.3, 5), rng.uniform(2.5, 6), rng.uniform(0.5, 3))
    return p, q


def test_kl_nig_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        p, q = _mc_pair(rng)
        est, se = kl_nig_monte_carlo(rng, p, q)
        assert abs(nig.kl_nig(NigParams(*p), NigParams(*q)) - est) <= 3 * se + 1e-12


def test_expected_gaussian_kl_matches_monte_carlo():
    rng = np.random.default_rng(77)
    for _ in range(20):
        p, q = _mc_pair(rng)
        est, se = kl_gaussian_monte_carlo(rng, p, q)
        assert abs(nig.kl_gaussian_expected(NigParams(*p), NigParams(*q)) - est) <= 3 * se + 1e-12


@given(valid, valid)
def test_kl_nig_nonnegative(p, q):
    assert nig.kl_nig(NigParams(*p), NigParams(*q)) >= -1e-12


# evidence penalty and total loss


def test_evidence_penalty_values():
    assert nig.evidence_penalty(NigParams(1.0, 1.0, 2.0, 1.0), 1.0) == 0.0
    assert nig.evidence_penalty(NigParams(0.0, 1.0, 2.0, 1.0), 1.0) == 4.0


@given(valid, st.floats(0.0, 5.0))
def test_evidence_penalty_linear_in_error(p, e):
    p = NigParams(*p)
    base = nig.evidence_penalty(p, p.gamma + 1.0)
    assert nig.evidence_penalty(p, p.gamma + e) == pytest.approx(e * base, rel=1e-12, abs=1e-12)


def test_total_loss_reductions():
    p = NigParams(0.3, 1.2, 2.5, 0.8)
    assert nig.total_loss(p, 1.0, lambda_kl=0.0) == nig.nll(p, 1.0)
    prior = NigPrior()
    assert nig.total_loss(prior.as_params(), 1.0, prior, lambda_kl=0.5, mode="kl") == pytest.approx(
        nig.nll(prior.as_params(), 1.0), abs=1e-12)
    expected = nig.nll(p, 1.0) + 0.5 * nig.evidence_penalty(p, 1.0)
    assert nig.total_loss(p, 1.0, lambda_kl=0.5, mode="evidence") == pytest.approx(expected)


def test_total_loss_contract():
    p = NigParams(0.3, 1.2, 2.5, 0.8)
    with pytest.raises(ContractError):
        nig.total_loss(p, 1.0, lambda_kl=-0.1)
    with pytest.raises(ContractError):
        nig.total_loss(p, 1.0, mode="mse")


@pytest.mark.parametrize("term", ["nll", "kl", "evidence", "total_kl", "total_evidence"])
def test_gradients_wrt_raw_outputs(term):
    rng = np.random.default_rng(sum(map(ord, term)))
    prior = NigPrior()
    worst = 0.0
    for _ in range(200):
        raw = Tensor(rng.normal(0, 1.5, size=(3, 4)), requires_grad=True)
        y = rng.uniform(-1, 5, size=3)

        def loss():
            p = nig.activate(raw)
            if term == "nll":
                v = nig.nll(p, y)
            elif term == "kl":
                v = nig.kl_nig(p, prior)
            elif term == "evidence":
                v = nig.evidence_penalty(p, y)
            else:
                v = nig.total_loss(p, y, prior, 0.1, term.split("_")[1])
            return v.sum()

        err, _ = check_gradients(loss, [raw])
        worst = max(worst, err)
    assert worst <= 1e-4


def test_tensor_inputs_give_tensor_outputs():
    raw = Tensor(np.zeros((2, 4)), requires_grad=True)
    with Tape():
        p = nig.activate(raw)
        out = nig.nll(p, np.array([0.0, 1.0]))
    assert isinstance(out, Tensor) and out.shape == (2,)


# uncertainty and OA probability


def test_uncertainty_reference():
    u = nig.uncertainty(NigParams(0.0, 1.0, 2.0, 1.0))
    assert (u.aleatoric, u.epistemic, u.total) == (1.0, 1.0, 2.0)


def test_epistemic_vanishes_with_evidence():
    assert nig.uncertainty(NigParams(0.0, 1e12, 2.0, 1.0)).epistemic < 1e-11


def test_aleatoric_is_invgamma_mean():
    rng = np.random.default_rng(9)
    a, b = 4.0, 3.0
    s = b / rng.gamma(a, 1.0, size=1_000_000)
    se = s.std(ddof=1) / math.sqrt(len(s))
    assert abs(nig.uncertainty(NigParams(0.0, 1.0, a, b)).aleatoric - s.mean()) <= 3 * se


def test_uncertainty_domain():
    with pytest.raises(DomainError):
        nig.uncertainty(NigParams(0.0, 1.0, 1.0, 1.0))


def test_prob_grade_geq_limits_and_median():
    p = NigParams(2.2, 1.0, 3.0, 1.0)
    assert nig.prob_grade_geq(p, 2.2) == pytest.approx(0.5, abs=1e-15)
    assert nig.prob_grade_geq(p, -1e6) == pytest.approx(1.0, abs=1e-12)
    assert nig.prob_grade_geq(p, 1e6) == pytest.approx(0.0, abs=1e-12)


def test_prob_grade_geq_matches_tail_quadrature():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p = NigParams(*random_params(rng))
        t = rng.uniform(-2, 5)
        tail, _ = integrate.quad(lambda y: math.exp(nig.predictive_logpdf(p, y)), t, np.inf,
                                 epsabs=1e-12, epsrel=1e-12, limit=200)
        assert nig.prob_grade_geq(p, t) == pytest.approx(tail, abs=1e-6)


@given(valid, st.floats(-5, 8), st.floats(0, 3))
def test_prob_grade_geq_nonincreasing(p, t, step):
    p = NigParams(*p)
    assert nig.prob_grade_geq(p, t + step) <= nig.prob_grade_geq(p, t) + 1e-15
