"""Special functions used by the evidential losses.

All functions accept scalars or numpy arrays and work in float64.
"""
import math

import numpy as np

from evidentia.errors import DomainError

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Bernoulli-number coefficients of the asymptotic expansions, lowest order first.
_DIGAMMA_ASYMP = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 5 / 660, -691 / 32760, 1 / 12)
_TRIGAMMA_ASYMP = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
_LIFT_TO = 6.0


def _as_positive(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} requires x > 0, got {x!r}")
    return arr


def _scalar_or_array(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _lanczos_log_gamma(x):
    # valid for x >= 0.5
    xm = x - 1.0
    acc = np.full_like(xm, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        acc = acc + _LANCZOS_COEF[i] / (xm + i)
    t = xm + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (xm + 0.5) * np.log(t) - t + np.log(acc)


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    arr = _as_positive(x, "log_gamma")
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    big = arr >= 0.5
    out[big] = _lanczos_log_gamma(arr[big])
    small = ~big
    if np.any(small):
        xs = arr[small]
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        out[small] = math.log(math.pi) - np.log(np.sin(math.pi * xs)) - _lanczos_log_gamma(1.0 - xs)
    return _scalar_or_array(out.reshape(np.shape(x)), x)


def _lift(x, step):
    """Shift every entry to >= _LIFT_TO, accumulating the recurrence term."""
    x = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    mask = x < _LIFT_TO
    while np.any(mask):
        acc[mask] += step(x[mask])
        x[mask] += 1.0
        mask = x < _LIFT_TO
    return x, acc


def digamma(x):
    """Digamma (psi) for x > 0: recurrence lift to x >= 6, then asymptotic series."""
    arr = np.atleast_1d(_as_positive(x, "digamma"))
    z, acc = _lift(arr, lambda v: -1.0 / v)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    power = inv2.copy()
    for c in _DIGAMMA_ASYMP:
        series += c * power
        power = power * inv2
    out = np.log(z) - 0.5 / z - series + acc
    return _scalar_or_array(out.reshape(np.shape(x)), x)


def trigamma(x):
    """Derivative of digamma for x > 0."""
    arr = np.atleast_1d(_as_positive(x, "trigamma"))
    z, acc = _lift(arr, lambda v: 1.0 / (v * v))
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    power = inv2 * inv  # z^-3
    for c in _TRIGAMMA_ASYMP:
        series += c * power
        power = power * inv2
    out = inv + 0.5 * inv2 + series + acc
    return _scalar_or_array(out.reshape(np.shape(x)), x)


def _betacf(a, b, x, max_iter=500, tol=1e-15):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _betainc_scalar(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        log_gamma(a + b) - log_gamma(a) - log_gamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    a_arr = _as_positive(a, "betainc")
    b_arr = _as_positive(b, "betainc")
    x_arr = np.asarray(x, dtype=np.float64)
    if np.any((x_arr < 0) | (x_arr > 1)):
        raise DomainError("betainc requires 0 <= x <= 1")
    out = np.vectorize(_betainc_scalar, otypes=[np.float64])(a_arr, b_arr, x_arr)
    return float(out) if out.ndim == 0 else out


def student_t_sf(x, loc, scale, dof):
    """Survival function P(T > x) of a location-scale Student-t."""
    loc = np.asarray(loc, dtype=np.float64)
    scale = _as_positive(scale, "student_t_sf scale")
    dof = _as_positive(dof, "student_t_sf dof")
    t = (np.asarray(x, dtype=np.float64) - loc) / scale
    t, dof = np.broadcast_arrays(t, dof)
    out = np.empty(t.shape)
    inf = np.isinf(t)
    out[inf] = np.where(t[inf] > 0, 0.0, 1.0)
    fin = ~inf
    tf, df = t[fin], dof[fin]
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    two_tail = betainc(df / 2.0, np.full_like(df, 0.5), df / (df + tf * tf))
    half = 0.5 * np.asarray(two_tail)
    out[fin] = np.where(tf > 0, half, 1.0 - half)
    return float(out) if out.ndim == 0 else out


def student_t_cdf(x, loc, scale, dof):
    # symmetry about loc keeps the lower tail accurate
    loc = np.asarray(loc, dtype=np.float64)
    return student_t_sf(2.0 * loc - np.asarray(x, dtype=np.float64), loc, scale, dof)
