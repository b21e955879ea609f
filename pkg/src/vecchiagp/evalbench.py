"""Cross-validation harness and prediction scores."""

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fit import FitConfig, fit_model
from .geoindex import domain_diagonal
from .predict import local_gaussian_predict, local_krige_predict, vecchia_predict

__all__ = [
    "CvPlan",
    "Scores",
    "MethodConfig",
    "CellResult",
    "BenchmarkReport",
    "METHOD_KINDS",
    "kfold_split",
    "score",
    "run_method",
    "run_benchmark",
]

METHOD_KINDS = ("exact", "vecchia", "bcl", "local_krige", "local_gaussian")
CSV_COLUMNS = ("method", "fold", "mspe", "mape", "picp", "mpiw", "time_s")


@dataclass(frozen=True)
class CvPlan:
    """Fold label (0..k-1) per observation."""

    k: int
    folds: np.ndarray
    seed: int

    def test_index(self, f):
        return np.flatnonzero(self.folds == f)

    def train_index(self, f):
        return np.flatnonzero(self.folds != f)


def kfold_split(n, k=3, seed=0):
    """Random permutation cut into k folds whose sizes differ by at most one."""
    n, k = int(n), int(k)
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, k)):
        folds[chunk] = f
    return CvPlan(k, folds, int(seed))


@dataclass(frozen=True)
class Scores:
    mspe: float
    mape: float
    picp: float
    mpiw: float
    wall_time_s: float = float("nan")


def score(pred, truth, wall_time_s=float("nan")):
    """MSPE, mean absolute error, interval coverage and mean interval width."""
    y = np.asarray(truth, dtype=float).ravel()
    if y.shape[0] != pred.mean.shape[0]:
        raise ValueError(f"{pred.mean.shape[0]} predictions for {y.shape[0]} truths")
    if y.size == 0:
        raise ValueError("nothing to score")
    err = pred.mean - y
    return Scores(
        mspe=float(np.mean(err * err)),
        mape=float(np.mean(np.abs(err))),
        picp=float(np.mean((pred.lower <= y) & (y <= pred.upper))),
        mpiw=float(np.mean(pred.upper - pred.lower)),
        wall_time_s=float(wall_time_s),
    )


@dataclass(frozen=True)
class MethodConfig:
    """One competitor in a benchmark.

    `kind` picks the estimator and predictor: ``exact`` (dense fit, kriging
    on all training points), ``vecchia`` (Vecchia fit, nearest-neighbor
    kriging), ``bcl`` (block-composite fit, local kriging), ``local_krige``
    (Vecchia fit, local kriging) and ``local_gaussian`` (no fit).
    """

    name: str
    kind: str = "vecchia"
    fit_config: FitConfig = field(default_factory=lambda: FitConfig(m_seq=(10, 30)))
    m_pred: int = 200
    delta: float = None
    cap: int = 500
    alpha: float = 0.05

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; choose from {', '.join(METHOD_KINDS)}")


def run_method(method, train, test_points, seed=0):
    """Fit (when needed) and predict; returns a PredictionSet."""
    kind = method.kind
    if kind == "local_gaussian":
        delta = method.delta if method.delta is not None else 0.05 * domain_diagonal(train.points)
        return local_gaussian_predict(train, test_points, delta, method.cap, method.alpha)
    lik = {"exact": "exact", "bcl": "bcl"}.get(kind, "vecchia")
    cfg = replace(method.fit_config, likelihood=lik, seed=seed)
    fit = fit_model(train, cfg)
    if kind == "exact":
        return vecchia_predict(train, fit, test_points, m_pred=train.n, alpha=method.alpha)
    if kind == "vecchia":
        return vecchia_predict(train, fit, test_points, m_pred=method.m_pred, alpha=method.alpha)
    return local_krige_predict(train, fit, test_points, method.delta, method.cap, method.alpha)


@dataclass(frozen=True)
class CellResult:
    method: str
    fold: int
    scores: Scores = None
    error: str = None


@dataclass(frozen=True)
class BenchmarkReport:
    cells: tuple
    methods: tuple

    def aggregate(self):
        """Per-method mean scores across folds that succeeded, total time."""
        out = {}
        for name in self.methods:
            ok = [c.scores for c in self.cells if c.method == name and c.scores is not None]
            if not ok:
                out[name] = None
                continue
            out[name] = Scores(
                mspe=float(np.mean([s.mspe for s in ok])),
                mape=float(np.mean([s.mape for s in ok])),
                picp=float(np.mean([s.picp for s in ok])),
                mpiw=float(np.mean([s.mpiw for s in ok])),
                wall_time_s=math.fsum(s.wall_time_s for s in ok),
            )
        return out

    def to_csv(self, record_time=True):
        """Per-fold rows, then one row per method with fold ``mean``."""

        def fmt(v, is_time=False):
            if v is None or (is_time and not record_time) or (isinstance(v, float) and math.isnan(v)):
                return "NA"
            return repr(float(v))

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        rows = [(c.method, str(c.fold), c.scores) for c in self.cells]
        rows += [(name, "mean", s) for name, s in self.aggregate().items()]
        for name, fold, s in rows:
            if s is None:
                w.writerow([name, fold] + ["NA"] * 5)
            else:
                w.writerow([name, fold, fmt(s.mspe), fmt(s.mape), fmt(s.picp), fmt(s.mpiw), fmt(s.wall_time_s, True)])
        return buf.getvalue()

    def to_text(self, record_time=True):
        """Aligned plain-text table of the per-method means."""
        head = ("method", "MSPE", "MAPE", "PICP", "MPIW", "time_s")
        lines = []
        for name, s in self.aggregate().items():
            if s is None:
                lines.append((name, "failed", "", "", "", ""))
                continue
            t = f"{s.wall_time_s:.2f}" if record_time else "NA"
            lines.append((name, f"{s.mspe:.4f}", f"{s.mape:.4f}", f"{s.picp:.3f}", f"{s.mpiw:.4f}", t))
        widths = [max(len(r[i]) for r in [head, *lines]) for i in range(len(head))]
        fmt_row = lambda r: "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt_row(head), fmt_row(tuple("-" * w for w in widths))] + [fmt_row(r) for r in lines]) + "\n"


def run_benchmark(data, methods, cv):
    """Score every method on every fold; failures become empty cells."""
    methods = list(methods)
    if not methods:
        raise ValueError("need at least one method")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    cells = []
    for method in methods:
        for f in range(cv.k):
            train = data.subset(cv.train_index(f))
            test = data.subset(cv.test_index(f))
            t0 = time.perf_counter()
            try:
                pred = run_method(method, train, test.points, seed=cv.seed)
                cells.append(CellResult(method.name, f, score(pred, test.responses, time.perf_counter() - t0)))
            except Exception as exc:  # recorded, the run continues
                cells.append(CellResult(method.name, f, None, f"{type(exc).__name__}: {exc}"))
    return BenchmarkReport(tuple(cells), tuple(names))
