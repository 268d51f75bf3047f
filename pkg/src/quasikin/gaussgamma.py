"""Marginal transform between Gaussian and Gamma "event count" variables.

A latent Gaussian variable Z with mean and variance both mu is mapped to a
Gamma(shape=mu, scale=1) variable through ``x = gamma_quantile(normal_cdf(z))``,
so x has the same mean and variance as z but positive support and a
Poisson-like skew.  The filter needs the transform value together with its
first two derivatives in z, which follow from the two densities:

    d1 = phi(z; mu, mu) / f(x; mu)
    d2 = d1 * ( -(z - mu)/mu - d1 * (mu - x - 1)/x )

with f the Gamma(mu, 1) density.  Everything here is built on the standard
library's erfc/lgamma so the numeric core carries no external
special-function dependency and is bit-stable across platforms.

All functions accept scalars or arrays and broadcast like numpy ufuncs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "gamma_cdf",
    "gamma_quantile",
    "normal_cdf",
    "transform",
    "jacobian_diag",
    "hessian_diag",
    "TransformPoint",
    "evaluate",
    "TAIL_PROB",
]

_EPS = 1.0e-15
_FPMIN = 1.0e-300
_XMIN = 1.0e-300          # smallest quantile we report; keeps x > 0
TAIL_PROB = 1.0e-12       # Gaussian input clamped to [TAIL_PROB, 1 - TAIL_PROB]
_WH_SHAPE = 1.0e7         # beyond this the quantile uses the Wilson-Hilferty limit

_lgamma_u = np.frompyfunc(math.lgamma, 1, 1)
_erfc_u = np.frompyfunc(math.erfc, 1, 1)


def _lgamma(a):
    return _lgamma_u(a).astype(float)


def normal_cdf(z, mean=0.0, var=1.0):
    """Gaussian CDF, accurate in the lower tail via erfc."""
    u = (np.asarray(z, dtype=float) - mean) / np.sqrt(var)
    return 0.5 * _erfc_u(-u / math.sqrt(2.0)).astype(float)


def _norm_ppf(p):
    """Rational approximation to the standard normal quantile (|rel err| < 2e-9).

    Only used to seed Newton iterations; final accuracy comes from the
    gamma-side refinement.
    """
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    plow, phigh = 0.02425, 1 - 0.02425
    lo = p < plow
    hi = p > phigh
    mid = ~(lo | hi)
    if lo.any():
        q = np.sqrt(-2 * np.log(p[lo]))
        out[lo] = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
                  ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if hi.any():
        q = np.sqrt(-2 * np.log(1 - p[hi]))
        out[hi] = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
                   ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if mid.any():
        q = p[mid] - 0.5
        s = q * q
        out[mid] = (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * q / \
                   (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1)
    return out


def _log1pmx(t):
    """log(1 + t) - t without cancellation for small |t|."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) <= 0.1
    if small.any():
        ts = t[small]
        # log1p(t) - t = -t^2 * (1/2 - t/3 + t^2/4 - ...); 16 terms reach
        # full precision at |t| <= 0.1.
        acc = np.full_like(ts, 1.0 / 17.0)
        for k in range(16, 1, -1):
            acc = 1.0 / k - ts * acc
        out[small] = -(ts * ts) * acc
    big = ~small
    if big.any():
        out[big] = np.log1p(t[big]) - t[big]
    return out


def _gamma_log_norm(x, a):
    """log( exp(-x) * x**a / Gamma(a) ), the prefactor shared by series and CF.

    Naive evaluation cancels catastrophically for large a with x near a
    (terms of size a*ln a, result O(1)), so beyond a = 30 the Stirling form
    with log1p(t) - t, t = (x - a)/a, is used instead.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = -x + a * np.log(x) - _lgamma(a)
        big = a >= 30.0
        if not big.any():
            return direct
        t = np.where(a > 0, (x - a) / a, 0.0)
        delta = 1.0 / (12.0 * a) - 1.0 / (360.0 * a**3) + 1.0 / (1260.0 * a**5) \
            - 1.0 / (1680.0 * a**7)
        stirling = a * _log1pmx(t) + 0.5 * np.log(a / (2.0 * math.pi)) - delta
        return np.where(big, stirling, direct)


def _gser(x, a, itmax):
    """Regularized lower incomplete gamma by power series (bulk and left tail).

    Terminates on a geometric bound for the *remaining tail*, not the last
    term alone: near x = a the term ratio approaches 1 and the tail is
    delt * r / (1 - r), which must itself drop below eps * sum.
    """
    summ = 1.0 / a
    delt = summ.copy()
    ap = a.copy()
    # Converged elements may keep accumulating: their terms are negligible by
    # construction, so the loop runs unmasked for speed, checking the stop
    # condition only every 8 terms (overshooting is harmless).
    with np.errstate(divide="ignore", over="ignore"):
        for it in range(itmax):
            ap += 1.0
            delt *= x / ap
            summ += delt
            if (it & 7) == 7:
                r = x / (ap + 1.0)
                tail_small = np.abs(delt) * r < (1.0 - r) * np.abs(summ) * _EPS
                if ((r < 1.0) & tail_small).all():
                    break
    return summ * np.exp(_gamma_log_norm(x, a))


def _gcf(x, a, itmax):
    """Regularized upper incomplete gamma by Lentz continued fraction (x >= a + 1)."""
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / _FPMIN)
    d = 1.0 / np.where(np.abs(b) < _FPMIN, _FPMIN, b)
    h = d.copy()
    active = np.ones_like(x, dtype=bool)
    for i in range(1, itmax + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
        c = b + an / c
        np.copyto(c, _FPMIN, where=np.abs(c) < _FPMIN)
        d = 1.0 / d
        delt = d * c
        # Freeze converged elements' value; their recurrence state may keep
        # evolving harmlessly.
        np.multiply(h, delt, out=h, where=active)
        active &= np.abs(delt - 1.0) >= _EPS
        if not active.any():
            break
    return np.exp(_gamma_log_norm(x, a)) * h


def _regularized_lower(x, a):
    """P(a, x) for x >= 0, a > 0, elementwise on equal-shape arrays."""
    # The continued fraction converges slowly near x = a for large shapes,
    # exactly where the positive-term series stays cancellation-free, so the
    # series region is widened to the whole bulk there.  Iteration counts for
    # both expansions grow like sqrt(a).
    amax = float(a.max()) if a.size else 1.0
    itmax = int(24.0 * math.sqrt(max(amax, 1.0))) + 400
    out = np.empty_like(x)
    zero = x == 0.0
    cross = np.where(a > 100.0, a + 8.0 * np.sqrt(a), a + 1.0)
    ser = (x < cross) & ~zero
    cf = ~ser & ~zero
    out[zero] = 0.0
    if ser.any():
        out[ser] = _gser(x[ser], a[ser], itmax)
    if cf.any():
        out[cf] = 1.0 - _gcf(x[cf], a[cf], itmax)
    return np.clip(out, 0.0, 1.0)


def gamma_cdf(x, shape):
    """Regularized lower incomplete gamma P(shape, x) = Pr[Gamma(shape, 1) <= x]."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    a_arr = np.atleast_1d(np.asarray(shape, dtype=float))
    if (a_arr <= 0).any() or not np.isfinite(a_arr).all():
        raise ValidationError("gamma shape must be positive and finite")
    if (x_arr < 0).any() or not np.isfinite(x_arr).all():
        raise ValidationError("gamma_cdf argument must be finite and nonnegative")
    x_b, a_b = np.broadcast_arrays(x_arr, a_arr)
    out = _regularized_lower(x_b.astype(float).copy(), a_b.astype(float).copy())
    if np.isscalar(x) and np.isscalar(shape):
        return float(out[0])
    return out.reshape(np.broadcast(np.asarray(x), np.asarray(shape)).shape)


def _gamma_logpdf(x, a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return -x + (a - 1.0) * np.log(x) - _lgamma(a)


def _quantile_start(p, a):
    """Initial guess for the gamma quantile (Wilson-Hilferty / small-shape)."""
    out = np.empty_like(p)
    big = a > 1.0
    if big.any():
        z = _norm_ppf(p[big])
        ab = a[big]
        t = 1.0 - 1.0 / (9.0 * ab) + z / (3.0 * np.sqrt(ab))
        out[big] = ab * np.clip(t, 1e-3, None) ** 3
    small = ~big
    if small.any():
        asml = a[small]
        psml = p[small]
        t = 1.0 - asml * (0.253 + 0.12 * asml)
        guess = np.empty_like(asml)
        lowp = psml < t
        with np.errstate(divide="ignore", over="ignore", under="ignore"):
            guess[lowp] = np.exp((np.log(psml[lowp]) - np.log(t[lowp])) / asml[lowp])
            guess[~lowp] = 1.0 - np.log1p(-(psml[~lowp] - t[~lowp]) / (1.0 - t[~lowp]))
        out[small] = guess
    return np.clip(out, _XMIN, None)


def gamma_quantile(p, shape):
    """Inverse of ``gamma_cdf`` in x: safeguarded Newton with bisection fallback.

    Accepts p strictly inside (0, 1).  Roundtrip |gamma_cdf(result) - p| is
    at machine level wherever the quantile is representable in double
    precision.
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    a_arr = np.atleast_1d(np.asarray(shape, dtype=float))
    if (a_arr <= 0).any() or not np.isfinite(a_arr).all():
        raise ValidationError("gamma shape must be positive and finite")
    if (p_arr <= 0).any() or (p_arr >= 1).any() or not np.isfinite(p_arr).all():
        raise ValidationError("quantile probability must lie strictly inside (0, 1)")
    p_b, a_b = np.broadcast_arrays(p_arr, a_arr)
    p_b = p_b.astype(float).copy()
    a_b = a_b.astype(float).copy()

    x = _quantile_start(p_b, a_b)
    # In the Wilson-Hilferty regime the start is already accurate to O(1/shape)
    # relative error; Newton sweeps there would cost sqrt(shape) series terms
    # for no usable gain.
    refine = a_b < _WH_SHAPE
    lo = np.zeros_like(x)           # P(lo) < p
    hi = np.full_like(x, np.inf)    # P(hi) > p
    for _ in range(128):
        if not refine.any():
            break
        f = np.zeros_like(x)
        idx = np.nonzero(refine)[0]
        f[idx] = _regularized_lower(x[idx].copy(), a_b[idx].copy()) - p_b[idx]
        lo = np.where(refine & (f < 0), np.maximum(lo, x), lo)
        hi = np.where(refine & (f > 0), np.minimum(hi, x), hi)
        refine &= np.abs(f) > 1e-14
        if not refine.any():
            break
        with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
            pdf = np.exp(_gamma_logpdf(x, a_b))
            newton = np.where(pdf > 0, x - f / pdf, np.nan)
        # Newton must land strictly inside the current bracket; otherwise, or
        # when it cannot move x at all, grow the upper bracket or bisect.
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        fallback = np.where(np.isinf(hi), x * 2.0, 0.5 * (lo + hi))
        cand = np.clip(np.where(bad, fallback, newton), _XMIN, None)
        stuck = refine & (cand == x)
        cand = np.where(stuck, np.clip(fallback, _XMIN, None), cand)
        # Still no representable movement: x is the double-precision quantile.
        refine &= ~(refine & (cand == x))
        x = np.where(refine, cand, x)
    out = np.clip(x, _XMIN, None)
    if np.isscalar(p) and np.isscalar(shape):
        return float(out[0])
    return out.reshape(np.broadcast(np.asarray(p), np.asarray(shape)).shape)


def _check_mu(mu):
    m = np.atleast_1d(np.asarray(mu, dtype=float))
    if (m <= 0).any() or not np.isfinite(m).all():
        raise ValidationError("transform mean/shape mu must be positive and finite")
    return m


def transform(z, mu):
    """G(z): Gamma(mu,1) quantile of the Normal(mu, mu) CDF of z.

    Strictly increasing in z; the Gaussian tail probability is clamped to
    [1e-12, 1 - 1e-12] so extreme inputs map to finite quantiles (the map
    is flat beyond roughly mu +- 7 sqrt(mu)).
    """
    m = _check_mu(mu)
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    z_b, m_b = np.broadcast_arrays(z_arr, m)
    prob = np.clip(normal_cdf(z_b, mean=m_b, var=m_b), TAIL_PROB, 1.0 - TAIL_PROB)
    out = gamma_quantile(prob, m_b)
    if np.isscalar(z) and np.isscalar(mu):
        return float(np.atleast_1d(out)[0])
    return out


def _jacobian_from_x(z, mu, x):
    log_phi = -0.5 * (z - mu) ** 2 / mu - 0.5 * np.log(2.0 * math.pi * mu)
    log_f = _gamma_logpdf(x, mu)
    return np.exp(log_phi - log_f)


def jacobian_diag(z, mu):
    """dG/dz: ratio of the Normal(mu, mu) density to the Gamma density at G(z).

    Always positive; the clamp applied inside ``transform`` is ignored here,
    so values in the extreme tails describe the unclamped map.
    """
    m = _check_mu(mu)
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    z_b, m_b = np.broadcast_arrays(z_arr, m)
    x = np.atleast_1d(transform(z_b, m_b))
    out = _jacobian_from_x(z_b, m_b, x)
    if np.isscalar(z) and np.isscalar(mu):
        return float(out[0])
    return out


def hessian_diag(z, mu):
    """d2G/dz2 via the chain rule on the two densities (see module docstring)."""
    m = _check_mu(mu)
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    z_b, m_b = np.broadcast_arrays(z_arr, m)
    x = np.atleast_1d(transform(z_b, m_b))
    d1 = _jacobian_from_x(z_b, m_b, x)
    out = d1 * (-(z_b - m_b) / m_b - d1 * (m_b - x - 1.0) / x)
    if np.isscalar(z) and np.isscalar(mu):
        return float(out[0])
    return out


@dataclass(frozen=True)
class TransformPoint:
    """Transform value and derivatives at one (z, mu) point (arrays allowed)."""

    shape: np.ndarray
    z: np.ndarray
    x: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def evaluate(z, mu) -> TransformPoint:
    """Evaluate x = G(z) and both derivatives, sharing the quantile solve."""
    m = _check_mu(mu)
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    z_b, m_b = np.broadcast_arrays(z_arr, m)
    x = np.atleast_1d(transform(z_b, m_b))
    d1 = _jacobian_from_x(z_b, m_b, x)
    d2 = d1 * (-(z_b - m_b) / m_b - d1 * (m_b - x - 1.0) / x)
    return TransformPoint(
        shape=np.array(m_b, copy=True), z=np.array(z_b, copy=True), x=x, d1=d1, d2=d2
    )
