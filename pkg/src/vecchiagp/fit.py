"""Maximum-likelihood fitting by Fisher scoring.

The ascent runs in ``(log sigma^2, log phi, logit nu, log tau^2)``. The
Fisher information is estimated by the outer product of per-observation
finite-difference scores, so each iteration costs one bundled gradient
evaluation plus the line-search evaluations.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .geoindex import default_n_blocks, domain_diagonal, maxmin_order, neighbor_sets, voronoi_partition
from .likelihood import FD_STEP, LoglikEvaluator, Method
from .model import NUGGET_FLOOR, PARAM_NAMES, MaternParams, from_log, log_jacobian, to_log
from .numerics import NotPositiveDefinite

__all__ = [
    "FitConfig",
    "FitResult",
    "FitError",
    "WaldRow",
    "initial_params",
    "fit_model",
    "wald_row",
    "wald_summary",
]

MIN_FIT_SIZE = 30
MAX_HALVINGS = 10
FALLBACK_STEP = 1e-2
MAX_JITTERS = 3
_LOG_FLOOR = math.log(NUGGET_FLOOR)
# keeps smoothness strictly inside its box in double precision
_LOGIT_BOUND = 27.0


class FitError(RuntimeError):
    """The likelihood could not be evaluated even after nugget jitter."""


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    `m_seq` only matters for the Vecchia likelihood; the dense methods run a
    single stage. `n_blocks` defaults to ``max(1, n // 500)`` for BCL.
    """

    likelihood: str = "vecchia"
    m_seq: tuple = (10, 30, 60)
    max_iter: int = 100
    rel_tol: float = 1e-6
    grad_tol: float = 1e-4
    init: MaternParams = None
    seed: int = 0
    n_blocks: int = None
    block_guard: int = 2000
    exact_guard: int = 10_000

    def __post_init__(self):
        Method(self.likelihood)
        m_seq = tuple(int(m) for m in self.m_seq)
        object.__setattr__(self, "m_seq", m_seq)
        if not m_seq:
            raise ValueError("m_seq must be nonempty")
        if any(b <= a for a, b in zip(m_seq, m_seq[1:])) or m_seq[0] < 1:
            raise ValueError(f"m_seq must be positive and strictly increasing, got {m_seq}")
        if not (self.rel_tol > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit_model`.

    ``trace`` holds ``(stage, loglik, step)`` rows; the first row of each
    stage is its starting point with step 0.
    """

    params: MaternParams
    beta_hat: np.ndarray
    loglik: float
    fisher_info: np.ndarray
    std_errors: np.ndarray
    iterations: int
    converged: bool
    trace: tuple
    beta_se: np.ndarray = field(default=None)
    gradient: np.ndarray = field(default=None)
    method: str = "vecchia"
    m_final: int = None
    n_jitter: int = 0

    @property
    def n_beta(self):
        return self.beta_hat.shape[0]


def initial_params(data):
    """Moment-based starting values.

    Total variance is the sample variance of the responses, split 90/10
    between partial sill and nugget; range is a tenth of the bounding-box
    diagonal and smoothness starts at 1.
    """
    if data.n < MIN_FIT_SIZE:
        raise ValueError(f"need at least {MIN_FIT_SIZE} observations, got {data.n}")
    var = float(np.var(data.responses, ddof=1))
    if not var > 0:
        raise ValueError("responses have zero variance")
    diag = domain_diagonal(data.points)
    if not diag > 0:
        raise ValueError("all sites coincide")
    return MaternParams(sigma_sq=0.9 * var, range=0.1 * diag, smoothness=1.0, nugget=0.1 * var)


def _evaluators(data, config):
    method = Method(config.likelihood)
    if method is Method.VECCHIA:
        order = maxmin_order(data.points)
        for m in config.m_seq:
            yield m, LoglikEvaluator(data, method, neighbor_sets(data.points, order, min(m, data.n - 1)))
    elif method is Method.BCL:
        nb = config.n_blocks if config.n_blocks is not None else default_n_blocks(data.n)
        blocks = voronoi_partition(data.points, nb, seed=config.seed)
        yield None, LoglikEvaluator(data, method, blocks, guard=config.block_guard)
    else:
        yield None, LoglikEvaluator(data, method, guard=config.exact_guard)


def _safe_loglik(ev, theta):
    try:
        return ev.loglik(from_log(theta)).value
    except (NotPositiveDefinite, FloatingPointError, ValueError, OverflowError):
        return -math.inf


def _jittered_gradient(ev, theta, jitters):
    """Gradient at theta; on Cholesky failure multiply the nugget by 10."""
    while True:
        try:
            return ev.gradient(from_log(theta), h=FD_STEP, theta=theta), theta, jitters
        except (NotPositiveDefinite, FloatingPointError) as exc:
            if jitters >= MAX_JITTERS:
                raise FitError(f"likelihood failed after {jitters} nugget jitters: {exc}") from exc
            theta = theta.copy()
            theta[3] = max(theta[3], _LOG_FLOOR) + math.log(10.0)
            jitters += 1


def _fisher(scores):
    return scores.T @ scores


def _direction(info, grad):
    scale = np.sqrt(np.maximum(np.diag(info), 1e-300))
    a = info / np.outer(scale, scale)
    a[np.diag_indices_from(a)] += 1e-10
    try:
        return np.linalg.solve(a, grad / scale) / scale
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a, grad / scale, rcond=None)[0] / scale


def _clamp(theta):
    theta = theta.copy()
    theta[2] = min(max(theta[2], -_LOGIT_BOUND), _LOGIT_BOUND)
    theta[3] = max(theta[3], _LOG_FLOOR)
    return theta


def fit_model(data, config=None):
    """Fit the Matérn parameters and the trend by Fisher scoring.

    For Vecchia the stages in ``config.m_seq`` run in order, each
    warm-started from the previous optimum. Within a stage a step of
    ``F^-1 g`` is halved up to 10 times until the log-likelihood does not
    decrease, after which a normalized gradient step of length 1e-2 is
    tried, itself halved up to 10 times. A stage stops when the relative
    log-likelihood change falls under `rel_tol` or the gradient norm
    under `grad_tol`.
    """
    config = config or FitConfig()
    if data.n < MIN_FIT_SIZE:
        raise ValueError(f"need at least {MIN_FIT_SIZE} observations, got {data.n}")
    start = config.init if config.init is not None else initial_params(data)
    theta = _clamp(to_log(start))
    trace = []
    iterations = 0
    jitters = 0
    converged = False
    res = None
    m_final = None
    for stage, (m, ev) in enumerate(_evaluators(data, config)):
        m_final = m
        res, theta, jitters = _jittered_gradient(ev, theta, jitters)
        value = res.value
        trace.append((stage, value, 0.0))
        converged = bool(np.linalg.norm(res.gradient) <= config.grad_tol)
        it = 0
        while not converged and it < config.max_iter:
            it += 1
            grad = res.gradient
            direction = _direction(_fisher(res.per_obs_scores), grad)
            step = 1.0
            new_theta = None
            for _ in range(MAX_HALVINGS + 1):
                cand = _clamp(theta + step * direction)
                ll = _safe_loglik(ev, cand)
                if ll >= value:
                    new_theta, new_value = cand, ll
                    break
                step *= 0.5
            if new_theta is None:
                gnorm = float(np.linalg.norm(grad))
                step = FALLBACK_STEP / gnorm if gnorm > 0 else 0.0
                for _ in range(MAX_HALVINGS + 1 if gnorm > 0 else 0):
                    cand = _clamp(theta + step * grad)
                    ll = _safe_loglik(ev, cand)
                    if ll >= value:
                        new_theta, new_value = cand, ll
                        break
                    step *= 0.5
            if new_theta is None:
                # no ascent found at finite-difference precision
                break
            change = abs(new_value - value) / max(abs(value), 1.0)
            theta, value = new_theta, new_value
            trace.append((stage, value, step))
            res, theta, jitters = _jittered_gradient(ev, theta, jitters)
            value = res.value
            converged = change <= config.rel_tol or bool(np.linalg.norm(res.gradient) <= config.grad_tol)
        iterations += it

    params = from_log(theta)
    info = _fisher(res.per_obs_scores)
    std_errors = _delta_se(info, params)
    beta_se = np.sqrt(np.maximum(np.diag(res.beta_cov), 0.0)) if res.beta_hat.size else np.empty(0)
    return FitResult(
        params=params,
        beta_hat=res.beta_hat,
        loglik=res.value,
        fisher_info=info,
        std_errors=std_errors,
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
        beta_se=beta_se,
        gradient=res.gradient,
        method=Method(config.likelihood).value,
        m_final=m_final,
        n_jitter=jitters,
    )


def _delta_se(info, params):
    """Natural-scale standard errors; NaN where the information is singular."""
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(4, np.nan)
    if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
        return np.full(4, np.nan)
    return log_jacobian(params) * np.sqrt(np.diag(cov))


# ---------------------------------------------------------------------------
# Wald summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaldRow:
    name: str
    estimate: float
    se: float
    z: float
    p: float
    missing: bool = False


def wald_row(estimate, se, name=""):
    """Z-score and two-sided normal p-value for one estimate."""
    estimate = float(estimate)
    se = float(se)
    if not (math.isfinite(se) and se > 0):
        return WaldRow(name, estimate, float("nan"), float("nan"), float("nan"), True)
    z = estimate / se
    return WaldRow(name, estimate, se, z, float(2.0 * ndtr(-abs(z))))


def wald_summary(fit):
    """Wald rows for the trend coefficients then the four Matérn parameters."""
    rows = [wald_row(b, s, f"beta{i}") for i, (b, s) in enumerate(zip(fit.beta_hat, fit.beta_se))]
    for name, est, se in zip(PARAM_NAMES, fit.params.as_array(), fit.std_errors):
        rows.append(wald_row(est, se, name))
    return rows
