"""Command-line batch runs: simulate, fit, predict, bootstrap-ci, crossval,
variogram.

Settings come from a ``key = value`` config file (``#`` starts a comment)
and from ``--key value`` flags, which win over the file. Every output file
gets a ``<file>.manifest.json`` sidecar with the tool version, the
resolved configuration, its hash, the seeds and the input hashes.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .evalbench import METHOD_KINDS, MethodConfig, kfold_split, run_benchmark
from .fit import FitConfig, FitResult, fit_model, wald_row, wald_summary
from .model import PARAM_NAMES, Dataset, MaternParams, MeanSpec, design_matrix
from .predict import cond_sim, gaussian_interval, local_gaussian_predict, local_krige_predict, vecchia_predict
from .simulate import PatternSpec, empirical_variogram, generate_pattern, simulate_gp
from .uq import BootstrapConfig, bootstrap_ci

__all__ = ["main", "CliError", "load_config", "read_dataset", "read_sites", "write_dataset", "RunConfig"]

ENV_WORKERS = "VECCHIAGP_WORKERS"


class CliError(Exception):
    """User-facing error; printed without a traceback, exit status 2."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "na") else conv(text)

    return parse


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _words(text):
    return tuple(v for v in text.replace(",", " ").split())


# key -> (parser, default as text)
KEYS = {
    "method": (str.strip, "vecchia"),
    "methods": (_words, "vecchia,local_gaussian"),
    "mean_kind": (str.strip, "zero"),
    "m_seq": (_ints, "10,30,60"),
    "m_pred": (int, "200"),
    "n_blocks": (_opt(int), "none"),
    "delta": (_opt(float), "none"),
    "cap": (int, "500"),
    "alpha": (float, "0.05"),
    "max_iter": (int, "100"),
    "rel_tol": (float, "1e-6"),
    "grad_tol": (float, "1e-4"),
    "detrend": (_bool, "false"),
    "target": (str.strip, "noisy"),
    "n_sims": (int, "0"),
    "n_reps": (int, "1000"),
    "subsample_size": (int, "10000"),
    "weight_radius": (_opt(float), "none"),
    "refit_m_seq": (_ints, "10,30"),
    "refit_max_iter": (int, "50"),
    "resample_each": (_bool, "false"),
    "k_folds": (int, "3"),
    "record_time": (_bool, "false"),
    "n": (int, "1000"),
    "pattern": (str.strip, "homogeneous"),
    "sigma_sq": (float, "1.0"),
    "range": (float, "0.1"),
    "smoothness": (float, "1.0"),
    "nugget": (float, "0.05"),
    "beta": (_floats, ""),
    "split": (float, "0.9"),
    "fraction": (float, "0.8"),
    "n_stripes": (int, "6"),
    "stripe_width": (float, "0.04"),
    "cluster_radius": (float, "0.06"),
    "n_bins": (int, "20"),
    "max_dist": (_opt(float), "none"),
    "max_pairs": (int, "1000000"),
    "seed": (int, "0"),
    "workers": (_opt(int), "none"),
    "output": (_opt(str.strip), "none"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def as_json(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}

    def digest(self):
        return hashlib.sha256(json.dumps(self.as_json(), sort_keys=True).encode()).hexdigest()


def parse_config_text(text, source="<config>"):
    """Raw ``key -> text`` mapping; rejects unknown and repeated keys by line."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise CliError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise CliError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise CliError(f"{source}:{lineno}: key {key!r} given twice")
        raw[key] = (value, lineno)
    return raw


def load_config(path=None, overrides=None):
    """Resolve defaults, then the config file, then flag overrides."""
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        raw = parse_config_text(text, str(path))
    for key, value in (overrides or {}).items():
        raw[key] = (value, None)
    values = {}
    for key, (conv, default) in KEYS.items():
        text, lineno = raw.get(key, (default, None))
        try:
            values[key] = conv(text)
        except ValueError as exc:
            where = f"{path}:{lineno}" if lineno else f"--{key}"
            raise CliError(f"{where}: bad value for {key}: {exc}") from exc
    if values["workers"] is None:
        env = os.environ.get(ENV_WORKERS)
        try:
            values["workers"] = int(env) if env else 1
        except ValueError as exc:
            raise CliError(f"{ENV_WORKERS} must be an integer, got {env!r}") from exc
    if values["workers"] < 1:
        raise CliError("workers must be >= 1")
    try:
        MeanSpec(values["mean_kind"])
    except ValueError:
        raise CliError(f"mean_kind must be one of zero, constant, linear; got {values['mean_kind']!r}") from None
    return RunConfig(values)


def _apply_workers(cfg):
    import numba

    numba.set_num_threads(max(1, min(cfg.workers, numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def _read_table(path, required, optional=()):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CliError(f"{path}: empty file, expected header {','.join(required)}") from None
    if len(set(header)) != len(header):
        raise CliError(f"{path}: duplicate column names in header")
    missing = [c for c in required if c not in header]
    if missing:
        raise CliError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = {c: header.index(c) for c in (*required, *optional) if c in header}
    rows = {c: [] for c in cols}
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not v.strip() for v in row):
            continue
        if len(row) != len(header):
            raise CliError(f"{path}: row {row_no} (line {row_no + 1}) has {len(row)} fields, expected {len(header)}")
        for c, j in cols.items():
            try:
                v = float(row[j])
            except ValueError:
                raise CliError(f"{path}: row {row_no} (line {row_no + 1}): column {c} is not a number: {row[j]!r}") from None
            if not math.isfinite(v):
                raise CliError(f"{path}: row {row_no} (line {row_no + 1}): column {c} is not finite")
            rows[c].append(v)
    return {c: np.array(v, dtype=float) for c, v in rows.items()}


def read_dataset(path, mean=MeanSpec.ZERO):
    t = _read_table(path, ("x", "y", "value"))
    if t["x"].size == 0:
        raise CliError(f"{path}: no data rows")
    return Dataset(np.column_stack([t["x"], t["y"]]), t["value"], mean)


def read_sites(path):
    t = _read_table(path, ("x", "y"))
    return np.column_stack([t["x"], t["y"]]).reshape(-1, 2)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_dataset(path, points, values):
    rows = [(_fmt(p[0]), _fmt(p[1]), _fmt(v)) for p, v in zip(points, values)]
    _write(path, _csv_text(("x", "y", "value"), rows))


def _write(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(path, command, cfg, inputs=None, seeds=None, extra=None):
    doc = {
        "tool": "vecchiagp",
        "version": __version__,
        "command": command,
        "config": cfg.as_json(),
        "config_hash": cfg.digest(),
        "seeds": seeds if seeds is not None else {"seed": cfg.seed},
        "inputs": {name: _sha256(p) for name, p in (inputs or {}).items()},
        "output": Path(path).name,
    }
    if extra:
        doc.update(extra)
    _write(str(path) + ".manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _emit(cfg, text, command, inputs=None, seeds=None, extra=None, suffix=""):
    if cfg.output is None:
        sys.stdout.write(text)
        return None
    path = cfg.output + suffix
    _write(path, text)
    _manifest(path, command, cfg, inputs, seeds, extra)
    return path


def _num(v):
    return None if v is None or not math.isfinite(v) else float(v)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg):
    if cfg.output is None:
        raise CliError("simulate needs an output prefix (key 'output')")
    if not 0 < cfg.split < 1:
        raise CliError("split must lie in (0, 1)")
    spec = PatternSpec(
        kind=cfg.pattern,
        n=cfg.n,
        seed=cfg.seed,
        fraction=cfg.fraction,
        n_stripes=cfg.n_stripes,
        stripe_width=cfg.stripe_width,
        radii=(cfg.cluster_radius,),
    )
    truth = MaternParams(cfg.sigma_sq, cfg.range, cfg.smoothness, cfg.nugget)
    pts = generate_pattern(spec)
    mean = MeanSpec(cfg.mean_kind)
    beta = cfg.beta if cfg.beta else None
    y = simulate_gp(pts, truth, mean, beta, seed=cfg.seed + 1)
    perm = np.random.default_rng([cfg.seed, 2]).permutation(cfg.n)
    n_train = int(round(cfg.split * cfg.n))
    extra = {"truth": dict(zip(PARAM_NAMES, truth.as_array().tolist())), "beta": list(beta or ())}
    seeds = {"pattern": cfg.seed, "field": cfg.seed + 1, "split": [cfg.seed, 2]}
    for suffix, idx in (("_train.csv", np.sort(perm[:n_train])), ("_test.csv", np.sort(perm[n_train:]))):
        path = cfg.output + suffix
        write_dataset(path, pts[idx], y[idx])
        _manifest(path, "simulate", cfg, seeds=seeds, extra=extra)
    return 0


def _fit_config(cfg, method=None):
    return FitConfig(
        likelihood=method or cfg.method,
        m_seq=cfg.m_seq,
        max_iter=cfg.max_iter,
        rel_tol=cfg.rel_tol,
        grad_tol=cfg.grad_tol,
        seed=cfg.seed,
        n_blocks=cfg.n_blocks,
    )


def _detrend(data):
    """OLS on [1, x, y]; returns residual data and the trend record."""
    x = design_matrix(data.points, MeanSpec.LINEAR)
    coef, *_ = np.linalg.lstsq(x, data.responses, rcond=None)
    resid = data.responses - x @ coef
    dof = max(data.n - 3, 1)
    s2 = float(resid @ resid) / dof
    se = np.sqrt(s2 * np.diag(np.linalg.inv(x.T @ x)))
    rows = [wald_row(c, s, name) for c, s, name in zip(coef, se, ("intercept", "x", "y"))]
    record = {"coefficients": coef.tolist(), "std_errors": se.tolist(), "table": [_row_json(r) for r in rows]}
    return Dataset(data.points, resid, MeanSpec.ZERO), record


def _row_json(r):
    return {"name": r.name, "estimate": _num(r.estimate), "se": _num(r.se), "z": _num(r.z), "p": _num(r.p)}


def _check_variance(data):
    if not np.var(data.responses) > 0:
        raise CliError("column 'value' has zero variance; nothing to fit")


def cmd_fit(cfg, data_path):
    data = read_dataset(data_path, MeanSpec(cfg.mean_kind))
    _check_variance(data)
    detrend = None
    if cfg.detrend:
        data, detrend = _detrend(data)
    if cfg.method not in ("vecchia", "bcl", "exact"):
        raise CliError(f"fit method must be vecchia, bcl or exact; got {cfg.method!r}")
    fit = fit_model(data, _fit_config(cfg))
    report = {
        "method": fit.method,
        "m_seq": list(cfg.m_seq),
        "mean_kind": data.mean.value,
        "n": data.n,
        "params": dict(zip(PARAM_NAMES, fit.params.as_array().tolist())),
        "std_errors": dict(zip(PARAM_NAMES, [_num(v) for v in fit.std_errors])),
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "beta": fit.beta_hat.tolist(),
        "beta_se": fit.beta_se.tolist(),
        "data_sha256": _sha256(data_path),
    }
    if data.mean is not MeanSpec.ZERO:
        report["trend"] = [_row_json(r) for r in wald_summary(fit)[: fit.n_beta]]
    if detrend is not None:
        report["detrend"] = detrend
    report["parameters"] = [_row_json(r) for r in wald_summary(fit)[fit.n_beta :]]
    _emit(cfg, json.dumps(report, indent=2, sort_keys=True) + "\n", "fit", inputs={"data": data_path})
    if not fit.converged:
        print("warning: optimizer did not converge; see 'converged' in the report", file=sys.stderr)
    return 0


def _load_fit(path, data_path=None):
    try:
        report = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read fit report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not a fit report ({exc})") from exc
    try:
        params = MaternParams(*(report["params"][k] for k in PARAM_NAMES))
        beta = np.asarray(report["beta"], dtype=float)
        mean = MeanSpec(report["mean_kind"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: malformed fit report ({exc})") from exc
    if data_path is not None and report.get("data_sha256") != _sha256(data_path):
        print(f"warning: {data_path} differs from the data the fit report was made on", file=sys.stderr)
    fit = FitResult(params, beta, report.get("loglik", float("nan")), None, np.full(4, np.nan), 0, True, ())
    return fit, mean, report


def _trend_at(report, pts):
    rec = report.get("detrend")
    if rec is None:
        return np.zeros(pts.shape[0])
    return design_matrix(pts, MeanSpec.LINEAR) @ np.asarray(rec["coefficients"])


def _model_data(data_path, mean, report):
    """Data on the scale the fit was made: detrended residuals when recorded."""
    data = read_dataset(data_path, mean)
    if report.get("detrend") is not None:
        data = Dataset(data.points, data.responses - _trend_at(report, data.points), mean)
    return data


def cmd_predict(cfg, data_path, sites_path, fit_path):
    fit, mean, report = _load_fit(fit_path, data_path)
    data = _model_data(data_path, mean, report)
    sites = read_sites(sites_path)
    header = ("x", "y", "mean", "sd", "lower", "upper", "flag")
    if sites.shape[0] == 0:
        _emit(cfg, _csv_text(header, []), "predict", inputs={"data": data_path, "sites": sites_path, "fit": fit_path})
        return 0
    latent = cfg.target == "latent"
    if cfg.target not in ("noisy", "latent"):
        raise CliError(f"target must be noisy or latent; got {cfg.target!r}")
    if cfg.method == "vecchia":
        pred = vecchia_predict(data, fit, sites, cfg.m_pred, cfg.alpha, latent=latent)
    elif cfg.method == "local_krige":
        pred = local_krige_predict(data, fit, sites, cfg.delta, cfg.cap, cfg.alpha, latent=latent)
    elif cfg.method == "local_gaussian":
        if cfg.delta is None:
            raise CliError("local_gaussian needs delta")
        pred = local_gaussian_predict(data, sites, cfg.delta, cfg.cap, cfg.alpha)
    else:
        raise CliError(f"predict method must be vecchia, local_krige or local_gaussian; got {cfg.method!r}")
    mean_col, sd = pred.mean, pred.sd
    if cfg.n_sims > 0:
        draws = cond_sim(data, fit, sites, cfg.n_sims, cfg.seed, cfg.m_pred).draws
        sd = draws.std(axis=0, ddof=1)
    shift = _trend_at(report, sites)
    mean_col = mean_col + shift
    lower, upper = gaussian_interval(mean_col, sd, cfg.alpha)
    rows = [
        (_fmt(s[0]), _fmt(s[1]), _fmt(m), _fmt(d), _fmt(lo), _fmt(hi), str(int(f)))
        for s, m, d, lo, hi, f in zip(sites, mean_col, sd, lower, upper, pred.flag)
    ]
    _emit(cfg, _csv_text(header, rows), "predict", inputs={"data": data_path, "sites": sites_path, "fit": fit_path})
    return 0


def cmd_bootstrap_ci(cfg, data_path, fit_path):
    fit, mean, report = _load_fit(fit_path, data_path)
    data = _model_data(data_path, mean, report)
    if mean is not MeanSpec.ZERO:
        resid = data.responses - design_matrix(data.points, mean) @ fit.beta_hat
        data = Dataset(data.points, resid, MeanSpec.ZERO)
    try:
        bcfg = BootstrapConfig(
            n_reps=cfg.n_reps,
            subsample_size=cfg.subsample_size,
            weight_radius=cfg.weight_radius,
            fit_config=FitConfig(m_seq=cfg.refit_m_seq, max_iter=cfg.refit_max_iter, seed=cfg.seed),
            alpha=cfg.alpha,
            seed=cfg.seed,
            resample_each=cfg.resample_each,
            workers=cfg.workers,
        )
    except ValueError as exc:
        raise CliError(f"invalid bootstrap settings: {exc}") from exc
    res = bootstrap_ci(data, fit, bcfg)
    rows = []
    for k, name in enumerate(PARAM_NAMES):
        sn = res.sn_fits[k]
        loc, scale, shape = (sn.location, sn.scale, sn.shape) if sn is not None else (math.nan,) * 3
        rows.append(
            (name, _fmt(res.estimate[k]), _fmt(loc), _fmt(scale), _fmt(shape), _fmt(res.intervals[k, 0]),
             _fmt(res.intervals[k, 1]), str(res.n_failed))
        )
    header = ("parameter", "estimate", "sn_location", "sn_scale", "sn_shape", "lower", "upper", "n_failed")
    seeds = {"seed": cfg.seed, "subsample": cfg.seed, "replicates": f"[{cfg.seed}, r] for r < {cfg.n_reps}"}
    _emit(cfg, _csv_text(header, rows), "bootstrap-ci", inputs={"data": data_path, "fit": fit_path}, seeds=seeds,
          extra={"unreliable": res.unreliable})
    if res.unreliable:
        print(f"warning: {res.n_failed} of {cfg.n_reps} refits failed; intervals flagged unreliable", file=sys.stderr)
    return 0


def cmd_crossval(cfg, data_path):
    bad = [m for m in cfg.methods if m not in METHOD_KINDS]
    if bad:
        raise CliError(f"unknown method(s) {', '.join(bad)}; valid: {', '.join(METHOD_KINDS)}")
    data = read_dataset(data_path, MeanSpec(cfg.mean_kind))
    methods = [
        MethodConfig(name=m, kind=m, fit_config=_fit_config(cfg, "vecchia"), m_pred=cfg.m_pred, delta=cfg.delta,
                     cap=cfg.cap, alpha=cfg.alpha)
        for m in cfg.methods
    ]
    try:
        cv = kfold_split(data.n, cfg.k_folds, cfg.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    report = run_benchmark(data, methods, cv)
    text = report.to_text(cfg.record_time)
    inputs = {"data": data_path}
    _emit(cfg, report.to_csv(cfg.record_time), "crossval", inputs=inputs)
    if cfg.output is not None:
        _emit(cfg, text, "crossval", inputs=inputs, suffix=".txt")
        sys.stdout.write(text)
    for c in report.cells:
        if c.error:
            print(f"warning: {c.method} fold {c.fold} failed: {c.error}", file=sys.stderr)
    return 0


def cmd_variogram(cfg, data_path):
    if cfg.n_bins < 1:
        raise CliError("n_bins must be >= 1")
    if cfg.max_pairs < 1:
        raise CliError("max_pairs must be >= 1")
    data = read_dataset(data_path)
    v = empirical_variogram(data, cfg.n_bins, cfg.max_dist, cfg.max_pairs, cfg.seed)
    rows = [(_fmt(c), "NA" if math.isnan(g) else _fmt(g), str(int(n))) for c, g, n in zip(v.bin_centers, v.semivariance, v.counts)]
    _emit(cfg, _csv_text(("bin_center", "semivariance", "count"), rows), "variogram", inputs={"data": data_path})
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": (cmd_simulate, ()),
    "fit": (cmd_fit, ("data",)),
    "predict": (cmd_predict, ("data", "sites", "fit")),
    "bootstrap-ci": (cmd_bootstrap_ci, ("data", "fit")),
    "crossval": (cmd_crossval, ("data",)),
    "variogram": (cmd_variogram, ("data",)),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="vecchiagp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, positionals) in COMMANDS.items():
        p = sub.add_parser(name)
        for pos in positionals:
            if pos == "fit":
                p.add_argument("--fit", dest="fit_report", required=True, help="fit report written by 'fit'")
            else:
                p.add_argument(pos)
        p.add_argument("-c", "--config", help="key = value settings file")
        for key in KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}", metavar="VALUE")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    func, positionals = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, overrides)
        _apply_workers(cfg)
        pos = [getattr(args, "fit_report" if p == "fit" else p) for p in positionals]
        return func(cfg, *pos)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
