"""Parametric bootstrap intervals for the Matérn parameters.

Replicates are simulated on one de-clustered subsample of the observed
locations, refitted, and each parameter's replicate distribution is
smoothed with a skew-normal fit whose quantiles give the interval.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fit import FitConfig, fit_model
from .geoindex import decluster_weights, weighted_subsample
from .likelihood import SizeGuardError
from .model import PARAM_NAMES, Dataset, MaternParams, MeanSpec, cov_matrix
from .numerics import DegenerateSample, SkewNormalParams, cholesky, skew_normal_fit, skew_normal_quantile
from .simulate import SIM_SIZE_GUARD

__all__ = [
    "BootstrapConfig",
    "BootstrapResult",
    "SNInterval",
    "CoverageStudy",
    "bootstrap_ci",
    "sn_interval",
    "coverage_study",
    "REFIT_CONFIG",
]

MIN_REPS = 50
FAILED_FRACTION = 0.1

# shortened schedule for replicate refits
REFIT_CONFIG = FitConfig(m_seq=(10, 30), max_iter=50)


@dataclass(frozen=True)
class BootstrapConfig:
    n_reps: int = 1000
    subsample_size: int = 10_000
    weight_radius: float = None
    fit_config: FitConfig = REFIT_CONFIG
    alpha: float = 0.05
    seed: int = 0
    resample_each: bool = False
    warm_start: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_reps < MIN_REPS:
            raise ValueError(f"n_reps must be >= {MIN_REPS}")
        if self.subsample_size < 1:
            raise ValueError("subsample_size must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class SNInterval:
    lower: float
    upper: float
    params: SkewNormalParams
    empirical: tuple
    fallback: bool = False


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates (rows of NaN for failed refits) and intervals.

    ``intervals[k]`` is the (lower, upper) pair for parameter k in the order
    sigma_sq, range, smoothness, nugget.
    """

    replicate_estimates: np.ndarray
    sn_fits: tuple
    intervals: np.ndarray
    n_failed: int
    estimate: np.ndarray
    empirical_intervals: np.ndarray
    subsample: np.ndarray
    unreliable: bool = False
    fallback: tuple = field(default=(False, False, False, False))


def sn_interval(samples, alpha=0.05, shape=None):
    """Skew-normal smoothed equal-tailed interval.

    Falls back to empirical quantiles (flagged) when the fit fails for any
    reason other than a degenerate sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} samples, got {x.size}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    emp = (float(np.quantile(x, alpha / 2)), float(np.quantile(x, 1 - alpha / 2)))
    try:
        sn = skew_normal_fit(x, shape=shape)
        lo = skew_normal_quantile(alpha / 2, sn)
        hi = skew_normal_quantile(1 - alpha / 2, sn)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ArithmeticError("non-finite skew-normal quantiles")
    except DegenerateSample:
        raise
    except (ArithmeticError, ValueError, RuntimeError):
        return SNInterval(emp[0], emp[1], None, emp, True)
    return SNInterval(float(lo), float(hi), sn, emp, False)


def _simulate_and_refit(task):
    pts, lower, seed, rep, fit_config = task
    z = np.random.default_rng([seed, rep]).standard_normal(pts.shape[0])
    y = lower @ z
    try:
        res = fit_model(Dataset(pts, y, MeanSpec.ZERO), fit_config)
        est = res.params.as_array()
        if not np.all(np.isfinite(est)):
            return rep, np.full(4, np.nan)
        return rep, est
    except Exception:  # a failed refit is counted, never imputed
        return rep, np.full(4, np.nan)


def _factor(pts, params):
    if pts.shape[0] > SIM_SIZE_GUARD:
        raise SizeGuardError(f"subsample of {pts.shape[0]} exceeds the dense simulation guard {SIM_SIZE_GUARD}")
    return cholesky(cov_matrix(pts, None, params, shared_sites=True), check_symmetric=False).lower


def bootstrap_ci(data, fit, config=None):
    """Parametric bootstrap on a de-clustered subsample.

    Replicate r is simulated from ``fit.params`` with normals from
    ``default_rng([seed, r])`` and refitted with ``config.fit_config``
    (started at ``fit.params`` when `warm_start` is set and the fit
    config has no explicit start).
    """
    config = config or BootstrapConfig()
    size = min(config.subsample_size, data.n)
    weights = decluster_weights(data.points, config.weight_radius)
    fit_config = config.fit_config
    if config.warm_start and fit_config.init is None:
        fit_config = replace(fit_config, init=fit.params)

    def subsample(rep):
        seed = config.seed if rep is None else [config.seed, rep, 1]
        return np.sort(weighted_subsample(data.points, weights, size, seed=seed))

    shared = subsample(None)
    tasks = []
    if not config.resample_each:
        pts = data.points[shared]
        lower = _factor(pts, fit.params)
        tasks = [(pts, lower, config.seed, r, fit_config) for r in range(config.n_reps)]
    else:
        for r in range(config.n_reps):
            pts = data.points[subsample(r)]
            tasks.append((pts, _factor(pts, fit.params), config.seed, r, fit_config))

    est = np.empty((config.n_reps, 4))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for rep, row in pool.map(_simulate_and_refit, tasks, chunksize=4):
                est[rep] = row
    else:
        for task in tasks:
            rep, row = _simulate_and_refit(task)
            est[rep] = row

    ok = np.all(np.isfinite(est), axis=1)
    n_failed = int(np.sum(~ok))
    if ok.sum() < MIN_REPS:
        raise RuntimeError(f"only {int(ok.sum())} of {config.n_reps} replicate refits succeeded; need {MIN_REPS}")
    fits, intervals, emp, fallback = [], np.empty((4, 2)), np.empty((4, 2)), []
    for k in range(4):
        si = sn_interval(est[ok, k], config.alpha)
        fits.append(si.params)
        intervals[k] = si.lower, si.upper
        emp[k] = si.empirical
        fallback.append(si.fallback)
    return BootstrapResult(
        replicate_estimates=est,
        sn_fits=tuple(fits),
        intervals=intervals,
        n_failed=n_failed,
        estimate=fit.params.as_array(),
        empirical_intervals=emp,
        subsample=shared,
        unreliable=n_failed > FAILED_FRACTION * config.n_reps,
        fallback=tuple(fallback),
    )


# ---------------------------------------------------------------------------
# Coverage study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageStudy:
    """Outcome of :func:`coverage_study`.

    ``covered[i, k]`` says whether master i's interval for parameter k
    contains the truth; rows for masters never run (time budget) are absent.
    """

    truth: MaternParams
    covered: np.ndarray
    intervals: np.ndarray
    n_failed: np.ndarray
    n_planned: int
    elapsed: float

    @property
    def n_done(self):
        return self.covered.shape[0]

    @property
    def coverage(self):
        if self.n_done == 0:
            return np.full(4, np.nan)
        return self.covered.mean(axis=0)

    def as_dict(self):
        return {name: float(c) for name, c in zip(PARAM_NAMES, self.coverage)}


def coverage_study(
    n_masters=100,
    n=1500,
    truth=MaternParams(1.0, 0.1, 1.0, 0.05),
    n_reps=200,
    subsample_size=800,
    seed=0,
    fit_config=None,
    refit_config=REFIT_CONFIG,
    alpha=0.05,
    workers=1,
    time_budget=None,
):
    """Empirical coverage of :func:`bootstrap_ci` intervals.

    Each master dataset places `n` uniform sites on the unit square,
    simulates a zero-mean field from `truth`, fits it and runs the
    bootstrap. With `time_budget` (seconds) the study stops starting new
    masters once the budget is spent.
    """
    fit_config = fit_config or FitConfig(m_seq=(10, 30))
    t0 = time.perf_counter()
    covered, intervals, failed = [], [], []
    truth_arr = truth.as_array()
    for i in range(n_masters):
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            break
        rng = np.random.default_rng([seed, i])
        pts = rng.uniform(size=(n, 2))
        lower = _factor(pts, truth)
        y = lower @ rng.standard_normal(n)
        data = Dataset(pts, y, MeanSpec.ZERO)
        fit = fit_model(data, fit_config)
        cfg = BootstrapConfig(
            n_reps=n_reps,
            subsample_size=subsample_size,
            fit_config=refit_config,
            alpha=alpha,
            seed=int(rng.integers(2**31)),
            workers=workers,
        )
        res = bootstrap_ci(data, fit, cfg)
        covered.append((res.intervals[:, 0] <= truth_arr) & (truth_arr <= res.intervals[:, 1]))
        intervals.append(res.intervals)
        failed.append(res.n_failed)
    return CoverageStudy(
        truth=truth,
        covered=np.array(covered, dtype=bool).reshape(-1, 4),
        intervals=np.array(intervals).reshape(-1, 4, 2),
        n_failed=np.array(failed, dtype=np.int64),
        n_planned=n_masters,
        elapsed=time.perf_counter() - t0,
    )
