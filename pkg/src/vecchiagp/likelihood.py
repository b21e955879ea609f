"""Exact, Vecchia and block-composite Gaussian log-likelihoods.

Every evaluator reduces the data to a whitened system: residuals ``e``,
whitened design ``X~`` and conditional standard deviations. The trend
coefficients are then profiled by least squares of ``e`` on ``X~`` and
the log-likelihood is a sum of per-observation Gaussian terms, which are
kept so that finite-difference scores are available per observation.
"""

import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np
from numba import jit, prange

from . import model as _m
from .geoindex import BlockPartition, VecchiaPlan
from .model import Dataset, MaternKernel, MaternParams, cov_matrix, from_log, to_log
from .numerics import NotPositiveDefinite, cholesky, solve_triangular

__all__ = [
    "Method",
    "SizeGuardError",
    "ConditionalVarianceError",
    "WhitenedSystem",
    "LoglikResult",
    "EXACT_SIZE_GUARD",
    "BLOCK_SIZE_GUARD",
    "FD_STEP",
    "exact_loglik",
    "vecchia_loglik",
    "bcl_loglik",
    "vecchia_whiten",
    "loglik_gradient",
    "LoglikEvaluator",
]

EXACT_SIZE_GUARD = 10_000
BLOCK_SIZE_GUARD = 2000
FD_STEP = 1e-5
VAR_FLOOR = 1e-12
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# prefer OpenMP; older TBB builds only produce a warning
if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


class Method(str, Enum):
    VECCHIA = "vecchia"
    BCL = "bcl"
    EXACT = "exact"


class SizeGuardError(ValueError):
    """Dense evaluation requested on more points than the configured guard."""


class ConditionalVarianceError(NotPositiveDefinite):
    """A Vecchia conditional variance came out non-positive.

    ``pivot`` is the ordered position, ``index`` the original data index.
    """

    def __init__(self, message, pivot, index):
        super().__init__(pivot, message)
        self.index = index


@dataclass(frozen=True)
class WhitenedSystem:
    """Decorrelated form of ``(y, X)``.

    Rows are in evaluation order (max-min order for Vecchia, block order
    for BCL, data order for exact).
    """

    residuals: np.ndarray
    whitened_design: np.ndarray
    cond_sd: np.ndarray
    coeffs: np.ndarray = None
    row_index: np.ndarray = None


@dataclass(frozen=True)
class LoglikResult:
    """Profiled log-likelihood.

    ``terms`` holds the per-observation log-density contributions in the
    evaluator's row order; their compensated sum is ``value``.
    """

    value: float
    beta_hat: np.ndarray
    terms: np.ndarray
    beta_cov: np.ndarray = None
    gradient: np.ndarray = None
    per_obs_scores: np.ndarray = None
    method: str = "exact"
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Compiled Vecchia kernel
# ---------------------------------------------------------------------------


@jit(nopython=True, cache=True, parallel=True)
def _vecchia_bundle(coords, z, nbrs, counts, kps, coefs, group, sig, nug, zt, logsd, bmat, fail):
    """Whiten ``z`` under K parameter sets at once.

    Parameter set j uses correlation group ``group[j]`` (a distinct range and
    smoothness); sets sharing a group reuse its correlation matrix. ``fail[j]``
    receives the first ordered position whose conditional variance is
    negative, or -1.
    """
    n = coords.shape[0]
    m = nbrs.shape[1]
    q = z.shape[1]
    n_groups = kps.shape[0]
    n_sets = sig.shape[0]
    size_max = m + 1
    chunk = 128
    n_chunks = (n + chunk - 1) // chunk
    want_b = bmat.shape[0] == n
    for c in prange(n_chunks):
        dmat = np.empty((size_max, size_max))
        ldmat = np.empty((size_max, size_max))
        rmat = np.empty((n_groups, size_max, size_max))
        lmat = np.empty((size_max, size_max))
        w = np.empty((size_max, q))
        idx = np.empty(size_max, dtype=np.int64)
        lo = c * chunk
        hi = min(n, lo + chunk)
        for i in range(lo, hi):
            k = counts[i]
            size = k + 1
            for a in range(k):
                idx[a] = nbrs[i, a]
            idx[k] = i
            for a in range(size):
                ia = idx[a]
                for b in range(a):
                    ib = idx[b]
                    d = _m._dist(coords[ia, 0], coords[ia, 1], coords[ib, 0], coords[ib, 1])
                    dmat[a, b] = d
                    ldmat[a, b] = math.log(d) if d > 0.0 else 0.0
            for g in range(n_groups):
                phi = kps[g, _m._K_PHI]
                lphi = math.log(phi)
                for a in range(size):
                    rmat[g, a, a] = 1.0
                    for b in range(a):
                        d = dmat[a, b]
                        if d == 0.0:
                            rmat[g, a, b] = 1.0
                        else:
                            rmat[g, a, b] = _m._corr_t(d / phi, ldmat[a, b] - lphi, kps[g], coefs[g])
            for j in range(n_sets):
                g = group[j]
                s2 = sig[j]
                total = s2 + nug[j]
                floor = VAR_FLOOR * total
                bad = False
                # Cholesky of the local covariance
                for a in range(size):
                    for b in range(a + 1):
                        v = s2 * rmat[g, a, b]
                        if a == b:
                            v += nug[j]
                        for r in range(b):
                            v -= lmat[a, r] * lmat[b, r]
                        if a == b:
                            if v < floor:
                                if v < -1e-8 * total:
                                    bad = True
                                v = floor
                            lmat[a, a] = math.sqrt(v)
                        else:
                            lmat[a, b] = v / lmat[b, b]
                if bad and fail[j] < 0:
                    fail[j] = i
                # forward substitution; only the last row is kept
                for a in range(size):
                    ia = idx[a]
                    la = lmat[a, a]
                    for col in range(q):
                        v = z[ia, col]
                        for r in range(a):
                            v -= lmat[a, r] * w[r, col]
                        w[a, col] = v / la
                for col in range(q):
                    zt[j, i, col] = w[k, col]
                logsd[j, i] = math.log(lmat[k, k])
                if want_b and j == 0:
                    # b solves L_gg' b = l_g
                    for a in range(k - 1, -1, -1):
                        v = lmat[k, a]
                        for r in range(a + 1, k):
                            v -= lmat[r, a] * bmat[i, r]
                        bmat[i, a] = v / lmat[a, a]


def _pack_sets(params_list):
    """Packed kernels, correlation groups and variances for a list of params."""
    keys = {}
    kps, coefs, group = [], [], []
    for p in params_list:
        key = (p.range, p.smoothness)
        if key not in keys:
            kern = MaternKernel(p)
            keys[key] = len(kps)
            kps.append(kern.packed)
            coefs.append(kern.coef)
        group.append(keys[key])
    sig = np.array([p.sigma_sq for p in params_list])
    nug = np.array([p.nugget for p in params_list])
    return np.array(kps), np.ascontiguousarray(np.array(coefs)), np.array(group, dtype=np.int64), sig, nug


# ---------------------------------------------------------------------------
# Profiling
# ---------------------------------------------------------------------------


def _profile(zt, logsd, n_beta):
    """Least-squares profile of the whitened system; returns (terms, beta, cov)."""
    e = zt[:, 0]
    if n_beta:
        xt = zt[:, 1:]
        q, r = np.linalg.qr(xt)
        beta = np.linalg.solve(r, q.T @ e)
        resid = e - xt @ beta
        rinv = np.linalg.inv(r)
        cov = rinv @ rinv.T
    else:
        beta = np.empty(0)
        resid = e
        cov = np.empty((0, 0))
    terms = -logsd - _HALF_LOG_2PI - 0.5 * resid * resid
    return terms, beta, cov


def _result(terms, beta, cov, method):
    value = math.fsum(terms)
    if not math.isfinite(value):
        raise FloatingPointError(f"{method} log-likelihood is not finite")
    return LoglikResult(value=value, beta_hat=beta, terms=terms, beta_cov=cov, method=method)


def _stack(data):
    if data.mean is _m.MeanSpec.ZERO:
        return data.responses[:, None].copy()
    return np.column_stack([data.responses, data.design()])


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------


class LoglikEvaluator:
    """Reusable log-likelihood for one dataset and one structure.

    Parameters
    ----------
    data : Dataset
    method : Method or str
    structure : VecchiaPlan or BlockPartition or None
        Required for ``vecchia`` and ``bcl`` respectively.
    guard : int, optional
        Size guard for the dense methods (whole data for exact, per block
        for BCL).
    """

    def __init__(self, data, method="vecchia", structure=None, guard=None):
        self.data = data
        self.method = Method(method)
        self.structure = structure
        self.n_beta = data.mean.n_columns
        z = _stack(data)
        if self.method is Method.VECCHIA:
            if not isinstance(structure, VecchiaPlan):
                raise TypeError("vecchia evaluation needs a VecchiaPlan")
            if structure.n != data.n:
                raise ValueError("plan was built on a different number of points")
            order = structure.order
            self._coords = np.ascontiguousarray(data.points[order])
            self._z = np.ascontiguousarray(z[order])
            self._nbrs = np.ascontiguousarray(structure.neighbors.reshape(data.n, structure.m))
            self._counts = np.ascontiguousarray(structure.counts)
        elif self.method is Method.BCL:
            if not isinstance(structure, BlockPartition):
                raise TypeError("bcl evaluation needs a BlockPartition")
            guard = BLOCK_SIZE_GUARD if guard is None else guard
            self._blocks = structure.blocks()
            for b, members in enumerate(self._blocks):
                if members.size > guard:
                    raise SizeGuardError(f"block {b} has {members.size} points, guard is {guard}")
            self._z = z
        else:
            guard = EXACT_SIZE_GUARD if guard is None else guard
            if data.n > guard:
                raise SizeGuardError(f"exact likelihood on {data.n} points exceeds guard {guard}")
            self._z = z

    @property
    def row_index(self):
        """Original data index of each term row."""
        if self.method is Method.VECCHIA:
            return self.structure.order
        if self.method is Method.BCL:
            return np.concatenate(self._blocks)
        return np.arange(self.data.n)

    # -- whitening ---------------------------------------------------------

    def _whiten_vecchia(self, params_list, want_coeffs=False):
        kps, coefs, group, sig, nug = _pack_sets(params_list)
        n_sets = len(params_list)
        n, q = self._z.shape
        zt = np.empty((n_sets, n, q))
        logsd = np.empty((n_sets, n))
        bmat = np.zeros((n, self._nbrs.shape[1])) if want_coeffs else np.zeros((0, 0))
        fail = np.full(n_sets, -1, dtype=np.int64)
        _vecchia_bundle(self._coords, self._z, self._nbrs, self._counts, kps, coefs, group, sig, nug, zt, logsd, bmat, fail)
        for j in range(n_sets):
            if fail[j] >= 0:
                pos = int(fail[j])
                raise ConditionalVarianceError(
                    f"non-positive conditional variance at ordered position {pos}", pos, int(self.structure.order[pos])
                )
        return zt, logsd, (bmat if want_coeffs else None)

    def _whiten_dense(self, params, rows):
        pts = self.data.points[rows]
        cov = cov_matrix(pts, None, params, shared_sites=True)
        f = cholesky(cov, check_symmetric=False)
        w = solve_triangular(f, self._z[rows])
        return w, np.log(np.diag(f.lower))

    def _whiten_one(self, params):
        if self.method is Method.VECCHIA:
            zt, logsd, _ = self._whiten_vecchia([params])
            return zt[0], logsd[0]
        if self.method is Method.EXACT:
            return self._whiten_dense(params, slice(None))
        parts, sds = [], []
        for b, rows in enumerate(self._blocks):
            try:
                w, ls = self._whiten_dense(params, rows)
            except NotPositiveDefinite as exc:
                err = NotPositiveDefinite(exc.pivot, f"block {b}: {exc}")
                err.block = b
                raise err from exc
            parts.append(w)
            sds.append(ls)
        return np.concatenate(parts), np.concatenate(sds)

    def whiten(self, params):
        """WhitenedSystem at `params` (conditional regression coefficients for Vecchia)."""
        if self.method is Method.VECCHIA:
            zt, logsd, b = self._whiten_vecchia([params], want_coeffs=True)
            zt, logsd = zt[0], logsd[0]
        else:
            zt, logsd = self._whiten_one(params)
            b = None
        return WhitenedSystem(zt[:, 0].copy(), zt[:, 1:].copy(), np.exp(logsd), b, self.row_index)

    # -- likelihood --------------------------------------------------------

    def loglik(self, params):
        zt, logsd = self._whiten_one(params)
        terms, beta, cov = _profile(zt, logsd, self.n_beta)
        return _result(terms, beta, cov, self.method.value)

    def loglik_many(self, params_list):
        """Profiled log-likelihoods for several parameter vectors."""
        if self.method is Method.VECCHIA:
            zt, logsd, _ = self._whiten_vecchia(list(params_list))
            out = []
            for j in range(len(params_list)):
                terms, beta, cov = _profile(zt[j], logsd[j], self.n_beta)
                out.append(_result(terms, beta, cov, self.method.value))
            return out
        return [self.loglik(p) for p in params_list]

    def gradient(self, params, h=FD_STEP, theta=None):
        """Central-difference gradient and per-observation scores in log coordinates.

        Pass `theta` (the log coordinates of `params`) to skip the
        conversion, which matters when smoothness sits on its box edge.
        """
        theta = to_log(params) if theta is None else np.asarray(theta, dtype=float)
        pts = [params]
        for k in range(4):
            for sgn in (1.0, -1.0):
                t = theta.copy()
                t[k] += sgn * h
                pts.append(from_log(t))
        res = self.loglik_many(pts)
        centre = res[0]
        grad = np.empty(4)
        scores = np.empty((centre.terms.shape[0], 4))
        for k in range(4):
            up, dn = res[1 + 2 * k], res[2 + 2 * k]
            grad[k] = (up.value - dn.value) / (2.0 * h)
            scores[:, k] = (up.terms - dn.terms) / (2.0 * h)
        return LoglikResult(
            value=centre.value,
            beta_hat=centre.beta_hat,
            terms=centre.terms,
            beta_cov=centre.beta_cov,
            gradient=grad,
            per_obs_scores=scores,
            method=centre.method,
        )


def exact_loglik(data, params, guard=EXACT_SIZE_GUARD):
    """Dense Gaussian log-likelihood with the trend profiled by GLS."""
    return LoglikEvaluator(data, Method.EXACT, guard=guard).loglik(params)


def vecchia_loglik(data, params, plan):
    """Vecchia log-likelihood: a product of univariate conditionals on `plan`."""
    return LoglikEvaluator(data, Method.VECCHIA, plan).loglik(params)


def bcl_loglik(data, params, blocks, guard=BLOCK_SIZE_GUARD):
    """Independent-blocks composite log-likelihood with pooled GLS trend."""
    return LoglikEvaluator(data, Method.BCL, blocks, guard=guard).loglik(params)


def vecchia_whiten(data, params, plan):
    return LoglikEvaluator(data, Method.VECCHIA, plan).whiten(params)


def loglik_gradient(data, params, structure=None, method="vecchia", h=FD_STEP):
    """Log-likelihood with gradient and per-observation scores attached.

    Derivatives are central differences with step `h` in
    ``(log sigma^2, log phi, logit nu, log tau^2)``.
    """
    return LoglikEvaluator(data, method, structure).gradient(params, h=h)
