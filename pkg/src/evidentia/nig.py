"""Normal-Inverse-Gamma evidential regression.

Every loss function accepts either plain numbers/arrays or ``Tensor`` values.
With tensors the result is a ``Tensor`` recorded on the active tape; with
plain inputs it is a float (scalar inputs) or an ndarray.
"""
import math
from dataclasses import dataclass, fields

import numpy as np

from evidentia.diffcore import ops
from evidentia.diffcore.special import student_t_sf
from evidentia.diffcore.tape import Tensor, as_tensor
from evidentia.errors import ContractError, DomainError

EPS = 1e-6
OA_THRESHOLD = 1.5
LOSS_MODES = ("kl", "evidence")


def _raw(v):
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


def _lifted(*values):
    return any(isinstance(v, Tensor) for v in values)


def _result(t, lifted):
    if lifted:
        return t
    return float(t.data) if t.data.ndim == 0 else t.data


@dataclass
class NigParams:
    gamma: object
    nu: object
    alpha: object
    beta: object

    def validate(self, what="NigParams"):
        g, nu, a, b = (_raw(getattr(self, f.name)) for f in fields(self))
        for name, v in (("gamma", g), ("nu", nu), ("alpha", a), ("beta", b)):
            if not np.all(np.isfinite(v)):
                raise ContractError(f"{what}.{name} must be finite")
        if np.any(nu <= 0):
            raise ContractError(f"{what}.nu must be > 0")
        if np.any(a <= 1):
            raise ContractError(f"{what}.alpha must be > 1")
        if np.any(b <= 0):
            raise ContractError(f"{what}.beta must be > 0")
        return self

    def numpy(self):
        """Detached copy holding plain float64 arrays."""
        return NigParams(*(np.array(_raw(getattr(self, f.name))) for f in fields(self)))

    def __getitem__(self, index):
        return NigParams(*(_raw(getattr(self, f.name))[index] for f in fields(self)))


@dataclass(frozen=True)
class NigPrior:
    """Low-evidence reference distribution for the KL regularizer."""

    gamma0: float = 2.0
    nu0: float = 0.1
    alpha0: float = 1.001
    beta0: float = 2.0

    def __post_init__(self):
        self.as_params().validate("NigPrior")

    def as_params(self):
        return NigParams(self.gamma0, self.nu0, self.alpha0, self.beta0)


@dataclass(frozen=True)
class UncertaintyEstimate:
    aleatoric: object
    epistemic: object
    total: object


def _as_prior(q):
    if isinstance(q, NigPrior):
        return q.as_params()
    if isinstance(q, NigParams):
        return q.validate("prior")
    raise ContractError(f"expected NigPrior or NigParams, got {type(q).__name__}")


def activate(raw):
    """Map unconstrained head outputs (..., 4) onto valid NIG parameters."""
    lifted = isinstance(raw, Tensor)
    raw_t = as_tensor(raw)
    if raw_t.shape[-1:] != (4,):
        raise ContractError(f"activate expects trailing dimension 4, got shape {raw_t.shape}")
    if not np.all(np.isfinite(raw_t.data)):
        raise ContractError("activate: non-finite raw head output")
    cols = [ops.getitem(raw_t, (..., i)) for i in range(4)]
    gamma = cols[0]
    nu = ops.softplus(cols[1]) + EPS
    alpha = ops.softplus(cols[2]) + (1.0 + EPS)
    beta = ops.softplus(cols[3]) + EPS
    return NigParams(*(_result(t, lifted) for t in (gamma, nu, alpha, beta)))


def nll(p, y):
    """Negative log marginal likelihood of y under NIG(p) (Student-t marginal)."""
    p.validate()
    lifted = _lifted(p.gamma, p.nu, p.alpha, p.beta, y)
    g, nu, a, b, y = (as_tensor(v) for v in (p.gamma, p.nu, p.alpha, p.beta, y))
    omega = 2.0 * b * (1.0 + nu)
    out = (
        0.5 * ops.log(math.pi / nu)
        - a * ops.log(omega)
        + (a + 0.5) * ops.log(nu * (y - g) ** 2 + omega)
        + ops.lgamma(a)
        - ops.lgamma(a + 0.5)
    )
    return _result(out, lifted)


def predictive_scale(p):
    """Scale of the Student-t predictive: sqrt(beta (1 + nu) / (nu alpha))."""
    nu, a, b = _raw(p.nu), _raw(p.alpha), _raw(p.beta)
    return np.sqrt(b * (1.0 + nu) / (nu * a))


def predictive_logpdf(p, y):
    """Log-density of the Student-t predictive (loc gamma, dof 2 alpha)."""
    p.validate()
    lifted = _lifted(p.gamma, p.nu, p.alpha, p.beta, y)
    g, nu, a, b, y = (as_tensor(v) for v in (p.gamma, p.nu, p.alpha, p.beta, y))
    dof = 2.0 * a
    scale2 = b * (1.0 + nu) / (nu * a)
    z2 = (y - g) ** 2 / scale2
    out = (
        ops.lgamma((dof + 1.0) * 0.5)
        - ops.lgamma(dof * 0.5)
        - 0.5 * ops.log(dof * math.pi * scale2)
        - (dof + 1.0) * 0.5 * ops.log(1.0 + z2 / dof)
    )
    return _result(out, lifted)


def kl_gaussian_expected(p, q):
    """E over sigma^2 ~ InvGamma(alpha, beta) of KL(N(gamma, s/nu) || N(gamma0, s/nu0))."""
    p.validate()
    q = _as_prior(q)
    lifted = _lifted(p.gamma, p.nu, p.alpha, p.beta)
    g, nu, a, b = (as_tensor(v) for v in (p.gamma, p.nu, p.alpha, p.beta))
    g0, nu0 = as_tensor(q.gamma), as_tensor(q.nu)
    ratio = nu0 / nu
    out = 0.5 * (ratio - ops.log(ratio) - 1.0) + 0.5 * nu0 * (g - g0) ** 2 * (a / b)
    return _result(out, lifted)


def kl_invgamma(alpha, beta, alpha0, beta0):
    """KL(InvGamma(alpha, beta) || InvGamma(alpha0, beta0)).

    Computed as the KL of the reciprocal gamma variables (shape, rate), which
    is the same number since the reciprocal map is a bijection.
    """
    for name, v in (("alpha", alpha), ("beta", beta), ("alpha0", alpha0), ("beta0", beta0)):
        if np.any(~(_raw(v) > 0)):
            raise DomainError(f"kl_invgamma: {name} must be positive")
    lifted = _lifted(alpha, beta, alpha0, beta0)
    a, b, a0, b0 = (as_tensor(v) for v in (alpha, beta, alpha0, beta0))
    out = (
        a0 * ops.log(b / b0)
        - (ops.lgamma(a) - ops.lgamma(a0))
        + (a - a0) * ops.digamma(a)
        - (b - b0) * (a / b)
    )
    return _result(out, lifted)


def kl_nig(p, q):
    """KL between two NIG distributions via the sigma^2 / mu-given-sigma^2 split."""
    p.validate()
    qp = _as_prior(q)
    lifted = _lifted(p.gamma, p.nu, p.alpha, p.beta)
    ig = kl_invgamma(as_tensor(p.alpha), as_tensor(p.beta), qp.alpha, qp.beta)
    gauss = kl_gaussian_expected(
        NigParams(*(as_tensor(v) for v in (p.gamma, p.nu, p.alpha, p.beta))), qp
    )
    return _result(ig + gauss, lifted)


def evidence_penalty(p, y):
    """|y - gamma| * (2 nu + alpha): evidence is only penalized where the fit is off."""
    p.validate()
    lifted = _lifted(p.gamma, p.nu, p.alpha, y)
    g, nu, a, y = (as_tensor(v) for v in (p.gamma, p.nu, p.alpha, y))
    out = ops.abs(y - g) * (2.0 * nu + a)
    return _result(out, lifted)


def regularizer(p, y, prior, mode):
    if mode == "kl":
        return kl_nig(p, prior)
    if mode == "evidence":
        return evidence_penalty(p, y)
    raise ContractError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")


def total_loss(p, y, prior=None, lambda_kl=0.01, mode="kl"):
    """NLL plus the weighted regularizer selected by ``mode``."""
    if lambda_kl < 0:
        raise ContractError(f"lambda_kl must be >= 0, got {lambda_kl}")
    if mode not in LOSS_MODES:
        raise ContractError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    prior = prior if prior is not None else NigPrior()
    base = nll(p, y)
    if lambda_kl == 0:
        return base
    return base + lambda_kl * regularizer(p, y, prior, mode)


def uncertainty(p):
    """Aleatoric E[sigma^2] and epistemic Var[mu] of NIG(p)."""
    a, nu, b = _raw(p.alpha), _raw(p.nu), _raw(p.beta)
    if np.any(a <= 1):
        raise DomainError("uncertainty requires alpha > 1 (inverse-gamma mean undefined)")
    aleatoric = b / (a - 1.0)
    epistemic = aleatoric / nu
    total = aleatoric + epistemic
    if np.ndim(aleatoric) == 0:
        aleatoric, epistemic, total = float(aleatoric), float(epistemic), float(total)
    return UncertaintyEstimate(aleatoric, epistemic, total)


def evidence(p):
    """Total evidence nu + 2 alpha, used to track the regularizer's pull."""
    return _raw(p.nu) + 2.0 * _raw(p.alpha)


def prob_grade_geq(p, threshold=OA_THRESHOLD):
    """P(y >= threshold) under the Student-t predictive of NIG(p)."""
    p.validate()
    return student_t_sf(threshold, _raw(p.gamma), predictive_scale(p), 2.0 * _raw(p.alpha))
