"""Matérn covariance model, parameter transforms and the dataset container.

The covariance between responses at sites ``s`` and ``s'`` is

    sigma_sq * 2**(1 - nu) / Gamma(nu) * r**nu * K_nu(r) + nugget * [s is s']

with ``r = |s - s'| / range``. Note the scaled distance is ``d / range``
with no ``sqrt(2 nu)`` factor.

Hot loops never call the Bessel routine directly. For a fixed smoothness a
:class:`MaternKernel` tabulates ``log rho(r)`` as piecewise Chebyshev series
in ``log r`` (about 1e-13 relative error); arguments outside the table and
half-integer smoothness go through exact formulas.
"""

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import jit
from numpy.polynomial import chebyshev as _cheb
from scipy.special import gammaln

from .numerics import _bessel_k_core, _temme_gammas, bessel_k

__all__ = [
    "NU_MIN",
    "NU_MAX",
    "NUGGET_FLOOR",
    "MaternParams",
    "MeanSpec",
    "Dataset",
    "MaternKernel",
    "BoundaryWarning",
    "as_points",
    "matern_cov",
    "cov_matrix",
    "to_log",
    "from_log",
    "log_jacobian",
    "design_matrix",
]

NU_MIN = 0.05
NU_MAX = 5.0
NUGGET_FLOOR = 1e-12
_LOGIT_EPS = 1e-12


class BoundaryWarning(UserWarning):
    """A parameter sat on the edge of its box and was clamped."""


@dataclass(frozen=True)
class MaternParams:
    """Partial sill, range, smoothness and nugget of the Matérn model."""

    sigma_sq: float
    range: float
    smoothness: float
    nugget: float = 0.0

    def __post_init__(self):
        for name in ("sigma_sq", "range", "smoothness", "nugget"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, float(v))
        if self.sigma_sq <= 0:
            raise ValueError(f"sigma_sq must be > 0, got {self.sigma_sq}")
        if self.range <= 0:
            raise ValueError(f"range must be > 0, got {self.range}")
        if not NU_MIN <= self.smoothness <= NU_MAX:
            raise ValueError(f"smoothness must lie in [{NU_MIN}, {NU_MAX}], got {self.smoothness}")
        if self.nugget < 0:
            raise ValueError(f"nugget must be >= 0, got {self.nugget}")

    @property
    def total_variance(self):
        return self.sigma_sq + self.nugget

    def as_array(self):
        return np.array([self.sigma_sq, self.range, self.smoothness, self.nugget])

    def replace(self, **changes):
        d = {"sigma_sq": self.sigma_sq, "range": self.range, "smoothness": self.smoothness, "nugget": self.nugget}
        d.update(changes)
        return MaternParams(**d)


PARAM_NAMES = ("sigma_sq", "range", "smoothness", "nugget")


class MeanSpec(str, Enum):
    """Trend model: zero, constant, or linear in the coordinates (1, x, y)."""

    ZERO = "zero"
    CONSTANT = "constant"
    LINEAR = "linear"

    @property
    def n_columns(self):
        return {"zero": 0, "constant": 1, "linear": 3}[self.value]


def as_points(coords):
    """Validate planar coordinates and return them as an (n, 2) float array."""
    pts = np.ascontiguousarray(np.asarray(coords, dtype=float))
    if pts.ndim == 1 and pts.size == 2:
        pts = pts.reshape(1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


def design_matrix(points, mean):
    """Trend design matrix: no columns, a column of ones, or [1, x, y]."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    mean = MeanSpec(mean)
    n = pts.shape[0]
    if mean is MeanSpec.ZERO:
        return np.zeros((n, 0))
    if mean is MeanSpec.CONSTANT:
        return np.ones((n, 1))
    return np.column_stack([np.ones(n), pts[:, 0], pts[:, 1]])


@dataclass(frozen=True)
class Dataset:
    """Observation sites, responses and the trend model."""

    points: np.ndarray
    responses: np.ndarray
    mean: MeanSpec = MeanSpec.ZERO

    def __post_init__(self):
        pts = as_points(self.points)
        y = np.ascontiguousarray(np.asarray(self.responses, dtype=float).ravel())
        if y.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {y.shape[0]} responses")
        if pts.shape[0] < 1:
            raise ValueError("dataset needs at least one site")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "mean", MeanSpec(self.mean))

    @property
    def n(self):
        return self.points.shape[0]

    def design(self):
        return design_matrix(self.points, self.mean)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.points[idx], self.responses[idx], self.mean)


# ---------------------------------------------------------------------------
# Kernel evaluation
# ---------------------------------------------------------------------------

_T_MIN = math.log(1e-10)
_T_MAX = math.log(60.0)
_T_WIDTH = 0.25
_DEG = 8
_N_PIECES = int(math.ceil((_T_MAX - _T_MIN) / _T_WIDTH))
# Chebyshev points of the first kind and the values -> coefficients map
_NODES = np.cos(np.pi * (np.arange(_DEG + 1) + 0.5) / (_DEG + 1))
_VAL2COEF = np.linalg.inv(_cheb.chebvander(_NODES, _DEG))

# packed kernel scalars, see MaternKernel.packed
_K_SIGMA, _K_PHI, _K_NU, _K_NUGGET, _K_LOGNORM, _K_G1, _K_G2, _K_GP, _K_GM, _K_HALF = range(10)


@jit(nopython=True, cache=True)
def _corr_direct(r, kp):
    nu = kp[_K_NU]
    kv = _bessel_k_core(nu, r, kp[_K_G1], kp[_K_G2], kp[_K_GP], kp[_K_GM])
    if kv == 0.0:
        return 0.0
    return math.exp(kp[_K_LOGNORM] + nu * math.log(r)) * kv


@jit(nopython=True, cache=True)
def _half_int_corr(r, n):
    # rho_{n+1/2}(r) = e^-r * n!/(2n)! * sum_k (n+k)!/(k!(n-k)!) (2r)^(n-k)
    total = 0.0
    coef = 1.0
    for k in range(n + 1):
        if k > 0:
            coef *= (n + k) * (n - k + 1) / k
        total += coef * (2.0 * r) ** (n - k)
    fact = 1.0
    for j in range(n + 1, 2 * n + 1):
        fact *= j
    return math.exp(-r) * total / fact


@jit(nopython=True, cache=True)
def _corr_t(r, t, kp, coef):
    """Matérn correlation at scaled distance r > 0 with ``t = log r`` given."""
    if kp[_K_HALF] > 0.5:
        return _half_int_corr(r, int(kp[_K_NU]))
    if t < _T_MIN or t >= _T_MAX:
        return _corr_direct(r, kp)
    u = (t - _T_MIN) / _T_WIDTH
    p = int(u)
    s = 2.0 * (u - p) - 1.0
    # Clenshaw
    b1 = 0.0
    b2 = 0.0
    s2 = 2.0 * s
    for k in range(_DEG, 0, -1):
        b0 = coef[p, k] + s2 * b1 - b2
        b2 = b1
        b1 = b0
    return math.exp(coef[p, 0] + s * b1 - b2)


@jit(nopython=True, cache=True)
def _corr(r, kp, coef):
    """Matérn correlation at scaled distance r >= 0."""
    if r == 0.0:
        return 1.0
    return _corr_t(r, math.log(r), kp, coef)


@jit(nopython=True, cache=True)
def _cov(dist, kp, coef):
    """Covariance between distinct sites at distance `dist` (no nugget)."""
    return kp[_K_SIGMA] * _corr(dist / kp[_K_PHI], kp, coef)


@jit(nopython=True, cache=True)
def _dist(ax, ay, bx, by):
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


@jit(nopython=True, cache=True)
def _cross_cov(a, b, kp, coef, out):
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = _cov(_dist(a[i, 0], a[i, 1], b[j, 0], b[j, 1]), kp, coef)


@jit(nopython=True, cache=True)
def _self_cov(a, kp, coef, out):
    n = a.shape[0]
    total = kp[_K_SIGMA] + kp[_K_NUGGET]
    for i in range(n):
        out[i, i] = total
        for j in range(i):
            v = _cov(_dist(a[i, 0], a[i, 1], a[j, 0], a[j, 1]), kp, coef)
            out[i, j] = v
            out[j, i] = v


@jit(nopython=True, cache=True)
def _corr_array(r, kp, coef, out):
    for i in range(r.shape[0]):
        out[i] = _corr(r[i], kp, coef)


def _logrho_exact(r, nu):
    return (1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(r) + np.log(bessel_k(nu, r))


class MaternKernel:
    """Compiled-ready Matérn kernel for one parameter vector.

    Building one costs a few hundred exact Bessel evaluations; after that
    each covariance entry costs one log, one exp and a short Clenshaw sum.
    """

    def __init__(self, params):
        self.params = params
        nu = params.smoothness
        half = (nu - math.floor(nu)) == 0.5
        mu = nu - int(nu + 0.5)
        g1, g2, gp, gm = _temme_gammas(mu)
        lognorm = (1.0 - nu) * math.log(2.0) - float(gammaln(nu))
        self.packed = np.array(
            [params.sigma_sq, params.range, nu, params.nugget, lognorm, g1, g2, gp, gm, 1.0 if half else 0.0]
        )
        self.coef = _table(nu) if not half else _EMPTY_TABLE

    def corr(self, r):
        r = np.ascontiguousarray(np.asarray(r, dtype=float).ravel())
        out = np.empty_like(r)
        _corr_array(r, self.packed, self.coef, out)
        return out


_TABLE_CACHE = {}
_EMPTY_TABLE = np.zeros((_N_PIECES, _DEG + 1))


def _table(nu):
    tab = _TABLE_CACHE.get(nu)
    if tab is not None:
        return tab
    left = _T_MIN + _T_WIDTH * np.arange(_N_PIECES)
    t = left[:, None] + (_NODES[None, :] + 1.0) * (0.5 * _T_WIDTH)
    coef = _logrho_exact(np.exp(t), nu) @ _VAL2COEF.T
    if len(_TABLE_CACHE) > 256:
        _TABLE_CACHE.clear()
    _TABLE_CACHE[nu] = coef
    return coef


def matern_cov(distance, params, same_site=False):
    """Matérn covariance at the given distance(s).

    `same_site` adds the nugget at zero distance; two distinct sites that
    happen to coincide get ``sigma_sq`` only.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distance must be finite and >= 0")
    k = MaternKernel(params)
    out = params.sigma_sq * k.corr(d / params.range).reshape(d.shape)
    if same_site:
        out = np.where(d == 0.0, out + params.nugget, out)
    return float(out) if out.ndim == 0 else out


def cov_matrix(a, b, params, shared_sites=False, kernel=None):
    """Covariance matrix between point sets `a` and `b`.

    With `shared_sites` the two sets are the same sites (pass ``b=None`` or
    ``b=a``), the result is symmetric and the nugget sits on the diagonal.
    """
    k = kernel if kernel is not None else MaternKernel(params)
    a = as_points(a)
    if shared_sites:
        out = np.empty((a.shape[0], a.shape[0]))
        _self_cov(a, k.packed, k.coef, out)
        return out
    b = as_points(b)
    out = np.empty((a.shape[0], b.shape[0]))
    _cross_cov(a, b, k.packed, k.coef, out)
    return out


# ---------------------------------------------------------------------------
# Unconstrained coordinates
# ---------------------------------------------------------------------------


def to_log(params):
    """Map parameters to (log sigma_sq, log range, logit nu, log nugget).

    The nugget is floored at 1e-12 before the log. Smoothness on the edge
    of [0.05, 5] is pulled inside by 1e-12 of the box width and a
    :class:`BoundaryWarning` is issued.
    """
    u = (params.smoothness - NU_MIN) / (NU_MAX - NU_MIN)
    if u < _LOGIT_EPS or u > 1.0 - _LOGIT_EPS:
        warnings.warn(f"smoothness {params.smoothness} on the box edge; clamped", BoundaryWarning, stacklevel=2)
        u = min(max(u, _LOGIT_EPS), 1.0 - _LOGIT_EPS)
    return np.array(
        [
            math.log(params.sigma_sq),
            math.log(params.range),
            math.log(u) - math.log1p(-u),
            math.log(max(params.nugget, NUGGET_FLOOR)),
        ]
    )


def from_log(theta):
    theta = np.asarray(theta, dtype=float)
    z = theta[2]
    u = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return MaternParams(
        sigma_sq=math.exp(theta[0]),
        range=math.exp(theta[1]),
        smoothness=min(max(NU_MIN + (NU_MAX - NU_MIN) * u, NU_MIN), NU_MAX),
        nugget=math.exp(theta[3]),
    )


def log_jacobian(params):
    """d(natural parameter) / d(log coordinate), elementwise."""
    nu = params.smoothness
    return np.array(
        [
            params.sigma_sq,
            params.range,
            (nu - NU_MIN) * (NU_MAX - nu) / (NU_MAX - NU_MIN),
            max(params.nugget, NUGGET_FLOOR),
        ]
    )
