import math

import numpy as np
import pytest
from scipy import stats

from conftest import TRUTH, simulate_field
from vecchiagp.fit import FitConfig, FitResult, fit_model, initial_params, wald_row, wald_summary
from vecchiagp.model import Dataset, MaternParams, MeanSpec


def stage_rows(trace):
    out = {}
    for stage, ll, step in trace:
        out.setdefault(stage, []).append(ll)
    return out


@pytest.fixture(scope="module")
def fit500():
    d = simulate_field(500, seed=21, mean=MeanSpec.CONSTANT, offset=1.0)
    return d, fit_model(d, FitConfig(m_seq=(10, 30)))


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(m_seq=()), dict(m_seq=(30, 10)), dict(m_seq=(10, 10)), dict(rel_tol=0), dict(grad_tol=-1), dict(likelihood="reml")],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FitConfig(**kw)

    def test_defaults(self):
        c = FitConfig()
        assert c.m_seq == (10, 30, 60) and c.max_iter == 100 and c.rel_tol == 1e-6 and c.grad_tol == 1e-4


class TestInitialParams:
    def test_variance_split(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(100)
        y = (y - y.mean()) / y.std(ddof=1) * math.sqrt(2)
        p = initial_params(Dataset(rng.uniform(size=(100, 2)), y))
        assert p.sigma_sq == pytest.approx(1.8) and p.nugget == pytest.approx(0.2)

    def test_unit_square_range(self):
        pts = np.vstack([[[0, 0], [1, 1]], np.random.default_rng(1).uniform(size=(40, 2))])
        p = initial_params(Dataset(pts, np.random.default_rng(2).standard_normal(42)))
        assert p.range == pytest.approx(0.1 * math.sqrt(2)) and p.smoothness == 1.0

    def test_errors(self):
        pts = np.random.default_rng(0).uniform(size=(40, 2))
        with pytest.raises(ValueError, match="zero variance"):
            initial_params(Dataset(pts, np.ones(40)))
        with pytest.raises(ValueError):
            initial_params(Dataset(pts[:20], np.arange(20.0)))


class TestFitModel:
    def test_recovery_single_seed(self, fit500):
        _, fit = fit500
        p = fit.params
        assert isinstance(fit, FitResult)
        assert abs(p.sigma_sq - 1) < 0.6 and abs(p.range - 0.1) < 0.06 and abs(p.smoothness - 1) < 0.6
        assert abs(fit.beta_hat[0] - 1.0) < 1.0
        assert fit.m_final == 30 and fit.n_beta == 1

    def test_trace_monotone_within_stage(self, fit500):
        _, fit = fit500
        for rows in stage_rows(fit.trace).values():
            assert all(b >= a for a, b in zip(rows, rows[1:]))

    def test_stage_warm_start(self, fit500):
        _, fit = fit500
        rows = stage_rows(fit.trace)
        for stage, lls in rows.items():
            assert lls[-1] >= lls[0]

    def test_standard_errors(self, fit500):
        _, fit = fit500
        assert fit.std_errors.shape == (4,) and np.all(fit.std_errors >= 0)
        assert fit.fisher_info.shape == (4, 4)
        np.testing.assert_allclose(fit.fisher_info, fit.fisher_info.T)
        assert np.all(np.isfinite(fit.beta_se)) and fit.beta_se[0] > 0

    def test_reproducible(self, fit500):
        d, fit = fit500
        again = fit_model(d, FitConfig(m_seq=(10, 30)))
        assert again.params == fit.params and again.loglik == fit.loglik
        np.testing.assert_array_equal(again.fisher_info, fit.fisher_info)
        assert again.trace == fit.trace

    def test_zero_mean_has_no_beta(self):
        d = simulate_field(200, seed=22)
        fit = fit_model(d, FitConfig(m_seq=(10,)))
        assert fit.n_beta == 0 and fit.beta_se.size == 0

    def test_exact_equals_full_vecchia(self):
        d = simulate_field(200, seed=23)
        tight = dict(rel_tol=1e-13, grad_tol=1e-7, max_iter=200)
        ex = fit_model(d, FitConfig(likelihood="exact", **tight))
        ve = fit_model(d, FitConfig(likelihood="vecchia", m_seq=(199,), **tight))
        np.testing.assert_allclose(ve.params.as_array(), ex.params.as_array(), atol=1e-4)

    def test_bcl(self):
        d = simulate_field(400, seed=24)
        fit = fit_model(d, FitConfig(likelihood="bcl", n_blocks=2))
        assert fit.method == "bcl" and np.isfinite(fit.loglik)

    def test_scale_equivariance(self):
        d = simulate_field(400, seed=25)
        cfg = FitConfig(m_seq=(10, 30), rel_tol=1e-10, grad_tol=1e-6)
        a = fit_model(d, cfg)
        b = fit_model(Dataset(d.points, 3.0 * d.responses), cfg)
        assert b.params.sigma_sq == pytest.approx(9 * a.params.sigma_sq, rel=0.02)
        assert b.params.nugget == pytest.approx(9 * a.params.nugget, rel=0.02)
        assert b.params.range == pytest.approx(a.params.range, rel=0.02)
        assert b.params.smoothness == pytest.approx(a.params.smoothness, rel=0.02)

    def test_non_convergence_is_flagged(self):
        d = simulate_field(200, seed=26)
        fit = fit_model(d, FitConfig(m_seq=(10,), max_iter=1, rel_tol=1e-15, grad_tol=1e-15))
        assert fit.converged is False and fit.iterations == 1

    def test_too_small(self):
        with pytest.raises(ValueError):
            fit_model(simulate_field(20, seed=0))


class TestWald:
    def test_reference_row_one(self):
        r = wald_row(-0.6079, 0.2086)
        assert r.z == pytest.approx(-2.9142, abs=5e-5)
        assert r.p == pytest.approx(0.0036, abs=5e-4)

    def test_reference_row_two(self):
        assert wald_row(-1.4541, 0.157).z == pytest.approx(-9.262, abs=5e-4)

    def test_zero_estimate(self):
        r = wald_row(0.0, 0.3)
        assert r.z == 0 and r.p == 1

    def test_against_scipy(self):
        for est, se in [(1.2, 0.5), (-3.0, 1.1), (0.01, 2.0)]:
            r = wald_row(est, se)
            assert r.p == pytest.approx(2 * stats.norm.sf(abs(est / se)), rel=1e-12)

    def test_missing_se(self):
        r = wald_row(1.0, float("nan"))
        assert r.missing and math.isnan(r.z)

    def test_summary_rows(self, fit500):
        _, fit = fit500
        rows = wald_summary(fit)
        assert [r.name for r in rows] == ["beta0", "sigma_sq", "range", "smoothness", "nugget"]
        assert rows[0].z == pytest.approx(fit.beta_hat[0] / fit.beta_se[0])
