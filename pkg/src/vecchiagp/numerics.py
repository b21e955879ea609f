"""Special functions and small dense linear-algebra kernels.

Everything here is a pure function of its inputs. The modified Bessel
function of the second kind is implemented from scratch (Temme's series
for small arguments, Steed's continued fraction for larger ones, upward
recurrence in the order) and compiled with numba, because it sits in the
innermost loop of every covariance evaluation.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import jit
from scipy import optimize, special
from scipy.linalg import lapack
from scipy.linalg import solve_triangular as _lapack_trsv

__all__ = [
    "DomainError",
    "NotPositiveDefinite",
    "DegenerateSample",
    "CholeskyFactor",
    "SkewNormalParams",
    "bessel_k",
    "cholesky",
    "solve_triangular",
    "log_det",
    "owens_t",
    "skew_normal_logpdf",
    "skew_normal_cdf",
    "skew_normal_fit",
    "skew_normal_quantile",
    "MAX_SKEWNESS",
    "MAX_FIT_SHAPE",
]


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot.

    Attributes
    ----------
    pivot : int
        Zero-based index of the failing pivot.
    """

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot})")


class DegenerateSample(ValueError):
    """Sample too small or with zero spread for a distribution fit."""


# ---------------------------------------------------------------------------
# Bessel K
# ---------------------------------------------------------------------------

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0
_EULER = 0.5772156649015329
# zeta(k) for k = 2..63, used by the series of log Gamma(1 + mu)
_ZETA = special.zeta(np.arange(2, 64, dtype=float), 1.0)


@jit(nopython=True, cache=True)
def _temme_gammas(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2.

    Uses log Gamma(1+mu) = -g*mu + sum_k (-1)^k zeta(k) mu^k / k, which
    avoids the cancellation in (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu).
    """
    even = 0.0
    odd_over_mu = -_EULER
    p = mu  # mu^(k-1)
    for j in range(_ZETA.shape[0]):
        k = j + 2
        term = _ZETA[j] / k
        if k % 2 == 0:
            even += term * p * mu
        else:
            odd_over_mu -= term * p
        p *= mu
    odd = odd_over_mu * mu
    if abs(odd) < 1e-8:
        sinhc = 1.0 + odd * odd / 6.0
    else:
        sinhc = math.sinh(odd) / odd
    scale = math.exp(-even)
    gam1 = scale * sinhc * odd_over_mu
    gam2 = scale * math.cosh(odd)
    gampl = math.exp(-(even + odd))
    gammi = math.exp(-(even - odd))
    return gam1, gam2, gampl, gammi


@jit(nopython=True, cache=True)
def _bessel_k_half(nu, x):
    # K_{n+1/2}(x) = sqrt(pi/2x) e^-x sum_k (n+k)! / (k! (n-k)!) (2x)^-k
    n = int(nu - 0.5 + 0.25)
    total = 0.0
    coef = 1.0
    inv2x = 0.5 / x
    pw = 1.0
    for k in range(n + 1):
        if k > 0:
            coef *= (n + k) * (n - k + 1) / k
            pw *= inv2x
        total += coef * pw
    return math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) * total


@jit(nopython=True, cache=True)
def _bessel_k_core(nu, x, gam1, gam2, gampl, gammi):
    """K_nu(x) for x > 0, given the Temme gammas of mu = nu - round(nu)."""
    nl = int(nu + 0.5)
    xmu = nu - nl
    xmu2 = xmu * xmu
    xi = 1.0 / x
    xi2 = 2.0 * xi
    if x < _XMIN:
        x2 = 0.5 * x
        pimu = math.pi * xmu
        fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = xmu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        total1 = p
        for i in range(1, _MAXIT):
            ff = (i * ff + p + q) / (i * i - xmu2)
            c *= d / i
            p /= i - xmu
            q /= i + xmu
            delta = c * ff
            total += delta
            total1 += c * (p - i * ff)
            if abs(delta) < abs(total) * _EPS:
                break
        rkmu = total
        rk1 = total1 * xi2
    else:
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
        q1 = 0.0
        q2 = 1.0
        a1 = 0.25 - xmu2
        q = a1
        c = a1
        a = -a1
        s = 1.0 + q * delh
        for i in range(2, _MAXIT):
            a -= 2 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1 = q2
            q2 = qnew
            q += c * qnew
            b += 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h += delh
            dels = q * delh
            s += dels
            if abs(dels / s) < _EPS:
                break
        h = a1 * h
        rkmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi
    for i in range(1, nl + 1):
        tmp = (xmu + i) * xi2 * rk1 + rkmu
        rkmu = rk1
        rk1 = tmp
    return rkmu


@jit(nopython=True, cache=True)
def _is_half_integer(nu):
    return nu - math.floor(nu) == 0.5


@jit(nopython=True, cache=True)
def _bessel_k_array(nu, x, out):
    half = _is_half_integer(nu)
    mu = nu - int(nu + 0.5)
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    for i in range(x.shape[0]):
        if half:
            out[i] = _bessel_k_half(nu, x[i])
        else:
            out[i] = _bessel_k_core(nu, x[i], gam1, gam2, gampl, gammi)


def bessel_k(order, x):
    """Modified Bessel function of the second kind, K_order(x).

    Parameters
    ----------
    order : float
        Nonnegative order, at most 10.
    x : float or array_like
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        Same shape as `x`.

    Raises
    ------
    DomainError
        If any argument is non-positive or non-finite, or the order is
        outside [0, 10].
    """
    order = float(order)
    if not math.isfinite(order) or order < 0.0 or order > 10.0:
        raise DomainError(f"order must lie in [0, 10], got {order}")
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("bessel_k argument must be finite")
    if np.any(arr <= 0.0):
        raise DomainError("bessel_k argument must be > 0")
    flat = np.ascontiguousarray(arr.ravel())
    out = np.empty_like(flat)
    _bessel_k_array(order, flat, out)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# Dense linear algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular Cholesky factor, ``m = lower @ lower.T``."""

    lower: np.ndarray

    @property
    def dim(self):
        return self.lower.shape[0]


def cholesky(m, check_symmetric=True):
    """Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    ValueError
        If `m` is not square or not symmetric within 1e-10 relative.
    NotPositiveDefinite
        With the zero-based index of the first non-positive pivot.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if check_symmetric and a.size:
        scale = np.max(np.abs(a))
        if np.max(np.abs(a - a.T)) > 1e-10 * max(scale, np.finfo(float).tiny):
            raise ValueError("matrix is not symmetric")
    if a.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return CholeskyFactor(c)


def solve_triangular(f, b, transposed=False):
    """Solve ``L x = b`` (or ``L.T x = b`` when `transposed`) by substitution."""
    lower = f.lower if isinstance(f, CholeskyFactor) else np.asarray(f, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != lower.shape[0]:
        raise ValueError(f"dimension mismatch: factor is {lower.shape[0]}, rhs has {b.shape[0]} rows")
    return _lapack_trsv(lower, b, lower=True, trans="T" if transposed else "N", check_finite=False)


def log_det(f):
    """log |m| for ``m = L L'``, i.e. twice the sum of log diagonal entries."""
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))


# ---------------------------------------------------------------------------
# Skew-normal distribution
# ---------------------------------------------------------------------------

_DELTA_MAX = math.sqrt(2.0 / math.pi)
# sup of the skew-normal skewness as |shape| -> inf
MAX_SKEWNESS = (4.0 - math.pi) / 2.0 * _DELTA_MAX**3 / (1.0 - 2.0 / math.pi) ** 1.5
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
# fitted shapes are capped here; the likelihood can increase without
# bound toward the half-normal limit, and Owen's T quadrature is
# accurate up to this magnitude
MAX_FIT_SHAPE = 30.0


@dataclass(frozen=True)
class SkewNormalParams:
    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not (math.isfinite(self.location) and math.isfinite(self.scale) and math.isfinite(self.shape)):
            raise ValueError("skew-normal parameters must be finite")
        if self.scale <= 0:
            raise ValueError("skew-normal scale must be > 0")


def _owens_t_small(h, a):
    # 64-point Gauss-Legendre on [0, a], |a| <= 1
    x = 0.5 * a * (_GL_NODES + 1.0)
    w = 0.5 * a * _GL_WEIGHTS
    h = np.asarray(h, dtype=float)[..., None]
    vals = np.exp(-0.5 * h * h * (1.0 + x * x)) / (1.0 + x * x)
    return (vals @ w) / (2.0 * math.pi)


def owens_t(h, a):
    """Owen's T function T(h, a), vectorized in `h`.

    For |a| > 1 the reflection
    T(h, a) = (Phi(h) + Phi(ah))/2 - Phi(h) Phi(ah) - T(ah, 1/a) - [h < 0]/2
    keeps the quadrature interval inside [0, 1].
    """
    h = np.abs(np.asarray(h, dtype=float))
    a = float(a)
    if a == 0.0:
        return np.zeros_like(h)
    sign = 1.0 if a > 0 else -1.0
    a = abs(a)
    if a <= 1.0:
        return sign * _owens_t_small(h, a)
    ah = a * h
    ph = special.ndtr(h)
    pah = special.ndtr(ah)
    t = 0.5 * (ph + pah) - ph * pah - _owens_t_small(ah, 1.0 / a)
    return sign * t


def skew_normal_cdf(x, params):
    """CDF ``Phi(z) - 2 T(z, shape)`` with ``z = (x - location) / scale``."""
    z = (np.asarray(x, dtype=float) - params.location) / params.scale
    out = special.ndtr(z) - 2.0 * owens_t(z, params.shape)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def skew_normal_logpdf(x, params):
    z = (np.asarray(x, dtype=float) - params.location) / params.scale
    return math.log(2.0) - math.log(params.scale) + special.log_ndtr(params.shape * z) - 0.5 * z * z - 0.5 * math.log(2 * math.pi)


def _moment_params(mean, sd, skew):
    """Method-of-moments skew-normal parameters from mean, sd and skewness."""
    skew = float(np.clip(skew, -0.99 * MAX_SKEWNESS, 0.99 * MAX_SKEWNESS))
    g = abs(skew) ** (2.0 / 3.0)
    delta = math.sqrt(0.5 * math.pi * g / (g + ((4.0 - math.pi) / 2.0) ** (2.0 / 3.0)))
    delta = math.copysign(delta, skew)
    shape = delta / math.sqrt(1.0 - delta * delta)
    scale = sd / math.sqrt(1.0 - 2.0 * delta * delta / math.pi)
    location = mean - scale * delta * _DELTA_MAX
    return location, scale, shape


def skew_normal_fit(samples, shape=None, max_evals=500):
    """Fit a skew-normal distribution by maximum likelihood.

    A method-of-moments start (skewness clamped to 0.99 of the attainable
    maximum) is refined by Nelder-Mead on the standardized sample, so the
    fit is equivariant under shifts and rescaling of the data. The
    returned fit never has a lower log-likelihood than the moment start.
    Free shapes are capped at ``MAX_FIT_SHAPE`` in magnitude.

    Parameters
    ----------
    samples : array_like
        At least 10 finite values with positive spread.
    shape : float, optional
        Hold the shape parameter fixed at this value.
    max_evals : int
        Budget of objective evaluations for the simplex search.

    Returns
    -------
    SkewNormalParams
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise DegenerateSample(f"need at least 10 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateSample("samples contain non-finite values")
    mean = float(np.mean(x))
    sd = float(np.std(x))
    if not sd > 1e-14 * max(1.0, abs(mean)):
        raise DegenerateSample("samples have zero spread")
    z = (x - mean) / sd

    if shape is not None and float(shape) == 0.0:
        return SkewNormalParams(mean, sd, 0.0)

    skew = float(np.mean(z**3))
    loc0, scale0, shape0 = _moment_params(0.0, 1.0, skew)
    if shape is not None:
        shape0 = float(shape)

    def nll(theta):
        loc, log_scale = theta[0], theta[1]
        alpha = shape0 if shape is not None else min(max(theta[2], -MAX_FIT_SHAPE), MAX_FIT_SHAPE)
        u = (z - loc) / math.exp(log_scale)
        return -float(np.sum(special.log_ndtr(alpha * u) - 0.5 * u * u) - z.size * log_scale)

    start = np.array([loc0, math.log(scale0)] + ([] if shape is not None else [shape0]))
    f0 = nll(start)
    res = optimize.minimize(
        nll,
        start,
        method="Nelder-Mead",
        options={"maxfev": max_evals, "xatol": 1e-9, "fatol": 1e-12},
    )
    best = res.x if np.isfinite(res.fun) and res.fun <= f0 else start
    loc_z, scale_z = best[0], math.exp(best[1])
    alpha = shape0 if shape is not None else min(max(float(best[2]), -MAX_FIT_SHAPE), MAX_FIT_SHAPE)
    return SkewNormalParams(float(mean + sd * loc_z), float(sd * scale_z), alpha)


def skew_normal_quantile(p, params, tol=1e-13):
    """Quantile of a skew-normal distribution, by bisection on the CDF."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if params.shape == 0.0:
        return params.location + params.scale * float(special.ndtri(p))

    def cdf(z):
        return float(special.ndtr(z) - 2.0 * owens_t(z, params.shape))

    lo, hi = -8.0, 8.0
    while cdf(lo) > p:
        lo *= 2.0
    while cdf(hi) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return params.location + params.scale * 0.5 * (lo + hi)
