"""Kriging, conditional simulation and local-neighborhood predictors."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, solve_triangular
from scipy.special import ndtri

from .geoindex import KdTree, maxmin_order
from .model import MaternKernel, as_points, cov_matrix, design_matrix

__all__ = [
    "PredictionSet",
    "CondSimDraws",
    "FLAG_OK",
    "FLAG_FALLBACK",
    "FLAG_CLAMPED",
    "vecchia_predict",
    "cond_sim",
    "local_gaussian_predict",
    "local_krige_predict",
    "gaussian_interval",
    "square_neighborhood",
]

FLAG_OK = 0
FLAG_FALLBACK = 1
FLAG_CLAMPED = 2
DEFAULT_M_PRED = 200
DEFAULT_CAP = 500
MAX_JITTERS = 3


@dataclass(frozen=True)
class PredictionSet:
    locations: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    flag: np.ndarray

    @property
    def n(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class CondSimDraws:
    """Joint draws at the prediction sites, one row per simulation."""

    n_sims: int
    draws: np.ndarray
    seed: int
    locations: np.ndarray = None


def gaussian_interval(mean, sd, alpha):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z = float(ndtri(1.0 - alpha / 2.0))
    return mean - z * sd, mean + z * sd


def _prediction_set(pred, mean, var, alpha, flag):
    sd = np.sqrt(np.maximum(var, 0.0))
    lo, hi = gaussian_interval(mean, sd, alpha)
    return PredictionSet(pred, mean, sd, lo, hi, float(alpha), flag)


class _Kriger:
    """Conditional-Gaussian predictor on arbitrary neighbor sets."""

    def __init__(self, data, fit, latent=False):
        self.data = data
        self.params = fit.params
        self.kernel = MaternKernel(fit.params)
        self.beta = np.asarray(fit.beta_hat, dtype=float)
        self.latent = latent
        self.resid = data.responses - self.trend(data.points)

    def trend(self, pts):
        if self.beta.size == 0:
            return np.zeros(as_points(pts).shape[0])
        return design_matrix(pts, self.data.mean) @ self.beta

    @property
    def prior_var(self):
        p = self.params
        return p.sigma_sq if self.latent else p.sigma_sq + p.nugget

    def _factor(self, pts):
        cov = cov_matrix(pts, None, self.params, shared_sites=True, kernel=self.kernel)
        jitter = 0.0
        for attempt in range(MAX_JITTERS + 1):
            try:
                return cho_factor(cov, lower=True, check_finite=False)
            except LinAlgError:
                if attempt == MAX_JITTERS:
                    raise
                jitter = max(10.0 * jitter, 10.0 * self.params.nugget, 1e-10 * self.params.sigma_sq)
                cov = cov.copy()
                cov[np.diag_indices_from(cov)] += jitter
        raise AssertionError("unreachable")

    def weights(self, site, nbr_pts):
        """Kriging weights and conditional variance of the target at `site`."""
        if nbr_pts.shape[0] == 0:
            return np.empty(0), self.prior_var
        cf = self._factor(nbr_pts)
        c = cov_matrix(site[None, :], nbr_pts, self.params, kernel=self.kernel)[0]
        lower = cf[0]
        w = solve_triangular(lower, c, lower=True, check_finite=False)
        b = solve_triangular(lower, w, lower=True, trans="T", check_finite=False)
        var = self.prior_var - float(w @ w)
        return b, var

    def predict_site(self, site, nbr):
        b, var = self.weights(site, self.data.points[nbr])
        mean = float(self.trend(site[None, :])[0]) + float(b @ self.resid[nbr])
        return mean, var


def _sorted_by_distance(pts, site, idx):
    d = np.hypot(pts[idx, 0] - site[0], pts[idx, 1] - site[1])
    return idx[np.lexsort((idx, d))], d


def _finish(kriger, pred, means, vars_, flags, alpha):
    clamp = vars_ < 0
    if np.any(clamp):
        flags = flags.copy()
        flags[clamp & (flags == FLAG_OK)] = FLAG_CLAMPED
    upper = kriger.prior_var
    return _prediction_set(pred, means, np.minimum(np.maximum(vars_, 0.0), upper), alpha, flags)


def vecchia_predict(data, fit, pred, m_pred=DEFAULT_M_PRED, alpha=0.05, latent=False):
    """Nearest-neighbor kriging with Gaussian intervals.

    Each site conditions on its `m_pred` nearest observations (ties to the
    smaller index). The default target is the noisy response, whose
    variance includes the nugget; ``latent=True`` predicts the noise-free
    field instead.
    """
    pred = as_points(pred)
    if m_pred < 1:
        raise ValueError("m_pred must be >= 1")
    kr = _Kriger(data, fit, latent)
    k = min(int(m_pred), data.n)
    tree = KdTree(data.points)
    # one extra neighbor resolves distance ties at the cut
    kq = min(k + 1, data.n)
    _, cand = tree.query(pred, k=kq)
    means = np.empty(pred.shape[0])
    vars_ = np.empty(pred.shape[0])
    for s in range(pred.shape[0]):
        nbr, _ = _sorted_by_distance(data.points, pred[s], cand[s])
        means[s], vars_[s] = kr.predict_site(pred[s], nbr[:k])
    return _finish(kr, pred, means, vars_, np.zeros(pred.shape[0], dtype=np.int64), alpha)


def cond_sim(data, fit, pred, n_sims=1000, seed=0, m_pred=DEFAULT_M_PRED):
    """Sequential Gaussian conditional simulation.

    Prediction sites are visited in max-min order. Each conditions on its
    `m_pred` nearest observations plus up to `m_pred` nearest sites
    already simulated. The weights depend only on geometry, so they are
    computed once per site and applied to all simulations; simulation
    ``s`` draws its normals from ``default_rng([seed, s])``.
    """
    pred = as_points(pred)
    if n_sims < 2:
        raise ValueError("n_sims must be >= 2")
    n_pred = pred.shape[0]
    kr = _Kriger(data, fit)
    order = maxmin_order(pred) if n_pred > 1 else np.zeros(1, dtype=np.int64)
    opts = pred[order]
    k_obs = min(int(m_pred), data.n)
    _, obs_nbr = KdTree(data.points).query(opts, k=min(k_obs + 1, data.n))
    trend = kr.trend(opts)
    noise = np.empty((n_sims, n_pred))
    for s in range(n_sims):
        noise[s] = np.random.default_rng([seed, s]).standard_normal(n_pred)
    # residual draws in max-min order, one column per site
    sims = np.empty((n_sims, n_pred))
    for k in range(n_pred):
        site = opts[k]
        on, _ = _sorted_by_distance(data.points, site, obs_nbr[k])
        on = on[:k_obs]
        if k > 0:
            sn, _ = _sorted_by_distance(opts, site, np.arange(k))
            sn = sn[: int(m_pred)]
        else:
            sn = np.empty(0, dtype=np.int64)
        nbr_pts = np.vstack([data.points[on], opts[sn]])
        b, var = kr.weights(site, nbr_pts)
        sd = math.sqrt(max(var, 0.0))
        base = float(b[: on.size] @ kr.resid[on])
        col = base + sd * noise[:, k]
        if sn.size:
            col = col + sims[:, sn] @ b[on.size :]
        sims[:, k] = col
    draws = np.empty_like(sims)
    draws[:, order] = sims + trend[None, :]
    return CondSimDraws(int(n_sims), draws, int(seed), pred)


def square_neighborhood(tree, pts, site, delta, cap):
    """Observations strictly inside the square of half-width `delta`, at most
    `cap` of them, nearest first."""
    idx = np.asarray(tree.query_radius(site, delta, p=np.inf)[0], dtype=np.int64)
    if idx.size:
        inside = (np.abs(pts[idx, 0] - site[0]) < delta) & (np.abs(pts[idx, 1] - site[1]) < delta)
        idx = idx[inside]
    idx, _ = _sorted_by_distance(pts, site, idx)
    return idx[: int(cap)]


def local_gaussian_predict(data, pred, delta, cap=DEFAULT_CAP, alpha=0.05):
    """Gaussian fitted to the responses in a square window around each site.

    Sites with fewer than two neighbors fall back to the global sample
    mean and standard deviation and carry ``FLAG_FALLBACK``.
    """
    pred = as_points(pred)
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if cap < 2:
        raise ValueError("cap must be >= 2")
    tree = KdTree(data.points)
    y = data.responses
    g_mean = float(np.mean(y))
    g_sd = float(np.std(y, ddof=1)) if data.n > 1 else 0.0
    mean = np.empty(pred.shape[0])
    sd = np.empty(pred.shape[0])
    flag = np.zeros(pred.shape[0], dtype=np.int64)
    for s in range(pred.shape[0]):
        nb = square_neighborhood(tree, data.points, pred[s], delta, cap)
        if nb.size < 2:
            mean[s], sd[s], flag[s] = g_mean, g_sd, FLAG_FALLBACK
        else:
            mean[s] = float(np.mean(y[nb]))
            sd[s] = float(np.std(y[nb], ddof=1))
    lo, hi = gaussian_interval(mean, sd, alpha)
    return PredictionSet(pred, mean, sd, lo, hi, float(alpha), flag)


def local_krige_predict(data, fit, pred, delta=None, cap=DEFAULT_CAP, alpha=0.05, latent=False):
    """Kriging restricted to the square window; `delta` defaults to 4 times
    the fitted range. Empty windows fall back to the trend and prior sd."""
    pred = as_points(pred)
    if delta is None:
        delta = 4.0 * fit.params.range
    if not delta > 0:
        raise ValueError("delta must be > 0")
    kr = _Kriger(data, fit, latent)
    tree = KdTree(data.points)
    means = np.empty(pred.shape[0])
    vars_ = np.empty(pred.shape[0])
    flag = np.zeros(pred.shape[0], dtype=np.int64)
    for s in range(pred.shape[0]):
        nb = square_neighborhood(tree, data.points, pred[s], delta, cap)
        if nb.size == 0:
            flag[s] = FLAG_FALLBACK
        means[s], vars_[s] = kr.predict_site(pred[s], nb)
    return _finish(kr, pred, means, vars_, flag, alpha)
