import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecchiagp.likelihood import SizeGuardError
from vecchiagp.model import Dataset, MaternParams, MeanSpec, cov_matrix
from vecchiagp.simulate import PatternKind, PatternSpec, empirical_variogram, generate_pattern, simulate_gp


def brute_variogram(pts, y, edges):
    n = len(y)
    sums = np.zeros(len(edges) - 1)
    counts = np.zeros(len(edges) - 1, dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.hypot(*(pts[i] - pts[j]))
            if d > edges[-1]:
                continue
            b = min(int(np.searchsorted(edges, d, side="right")) - 1, len(counts) - 1)
            sums[b] += (y[i] - y[j]) ** 2
            counts[b] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / (2 * np.maximum(counts, 1)), np.nan), counts


class TestSimulateGp:
    def test_single_point(self):
        y = simulate_gp([[0.5, 0.5]], MaternParams(0.6, 1, 1, 0.4), seed=3)
        assert y[0] == pytest.approx(np.random.default_rng(3).standard_normal(1)[0], rel=1e-14)

    def test_pure_noise(self):
        pts = np.random.default_rng(0).uniform(size=(2000, 2))
        y = simulate_gp(pts, MaternParams(1e-10, 0.1, 1, 1.0), seed=1)
        from scipy.spatial import cKDTree

        _, idx = cKDTree(pts).query(pts, k=2)
        assert abs(np.corrcoef(y, y[idx[:, 1]])[0, 1]) < 0.05

    def test_marginal_variance(self):
        # a short range keeps the effective sample size near n
        pts = np.random.default_rng(1).uniform(size=(3000, 2))
        y = simulate_gp(pts, MaternParams(1, 0.02, 0.5, 0.1), seed=2)
        assert 0.95 <= y.var() <= 1.25

    def test_covariance(self):
        pts = np.random.default_rng(2).uniform(size=(5, 2))
        p = MaternParams(1, 0.3, 1.5, 0.1)
        ys = np.array([simulate_gp(pts, p, seed=s) for s in range(500)])
        emp = np.cov(ys.T)
        ref = cov_matrix(pts, None, p, shared_sites=True)
        ok = (np.abs(emp - ref) <= 0.2 * np.abs(ref)) | (np.abs(emp - ref) <= 0.05)
        # sampling sd of a covariance estimate at 500 draws is about 0.06
        assert ok.mean() >= 0.8

    def test_trend(self):
        pts = np.array([[0.0, 0.0], [1.0, 2.0]])
        p = MaternParams(1e-10, 0.1, 1, 1e-10)
        y = simulate_gp(pts, p, MeanSpec.LINEAR, beta=[2.0, 1.0, -1.0], seed=0)
        np.testing.assert_allclose(y, [2.0, 1.0], atol=1e-3)

    def test_deterministic(self):
        pts = np.random.default_rng(3).uniform(size=(50, 2))
        p = MaternParams(1, 0.1, 1, 0.05)
        np.testing.assert_array_equal(simulate_gp(pts, p, seed=4), simulate_gp(pts, p, seed=4))

    def test_guard(self):
        with pytest.raises(SizeGuardError):
            simulate_gp(np.zeros((11, 2)), MaternParams(1, 0.1, 1, 0.1), guard=10)


class TestPatterns:
    def test_homogeneous_small(self):
        pts = generate_pattern(PatternSpec("homogeneous", n=4))
        assert pts.shape == (4, 2) and np.all((pts >= 0) & (pts <= 1))

    def test_stripe_band(self):
        pts = generate_pattern(PatternSpec("striped_gaps", n=5000, stripes=((0.4, 0.6),)))
        assert not np.any((pts[:, 1] >= 0.4) & (pts[:, 1] <= 0.6))

    def test_default_stripes(self):
        spec = PatternSpec("striped_gaps", n=3000)
        pts = generate_pattern(spec)
        for a, b in spec.bands():
            assert not np.any((pts[:, 1] >= a) & (pts[:, 1] <= b))
        assert len(spec.bands()) == 6

    def test_dense_subregion_fraction(self):
        rect = (0.0, 0.0, 0.5, 0.5)
        pts = generate_pattern(PatternSpec("dense_subregion", n=10_000, subregion=rect, fraction=0.8, seed=1))
        frac = np.mean((pts[:, 0] <= 0.5) & (pts[:, 1] <= 0.5))
        assert 0.78 <= frac <= 0.82

    def test_nested_density_ratios(self):
        spec = PatternSpec("nested_density", n=20_000, seed=2)
        pts = generate_pattern(spec)
        inner = spec.nested[1]
        middle = spec.nested[0]
        area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
        in_r = lambda r: (pts[:, 0] >= r[0]) & (pts[:, 0] <= r[2]) & (pts[:, 1] >= r[1]) & (pts[:, 1] <= r[3])
        dens_in = in_r(inner).sum() / area(inner)
        dens_mid = (in_r(middle) & ~in_r(inner)).sum() / (area(middle) - area(inner))
        dens_out = (~in_r(middle)).sum() / (1 - area(middle))
        assert dens_mid / dens_out == pytest.approx(4, rel=0.1)
        assert dens_in / dens_out == pytest.approx(16, rel=0.1)

    def test_clusters_in_disks(self):
        spec = PatternSpec("circular_clusters", n=2000, seed=3)
        pts = generate_pattern(spec)
        c = np.asarray(spec.centers)
        d = np.hypot(pts[:, None, 0] - c[None, :, 0], pts[:, None, 1] - c[None, :, 1]).min(axis=1)
        assert np.all(d <= spec.radii[0] + 1e-12)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            generate_pattern(PatternSpec("striped_gaps", n=10, stripes=((0.0, 1.0),)))
        with pytest.raises(ValueError):
            PatternSpec("dense_subregion", subregion=(0.5, 0.5, 1.5, 1.0))

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(list(PatternKind)), st.integers(1, 500), st.integers(0, 2**31))
    def test_exact_count_in_square(self, kind, n, seed):
        spec = PatternSpec(kind.value, n=n, seed=seed)
        pts = generate_pattern(spec)
        assert pts.shape == (n, 2) and np.all((pts >= 0) & (pts <= 1))
        np.testing.assert_array_equal(pts, generate_pattern(spec))


class TestVariogram:
    def test_constant_field(self):
        pts = np.random.default_rng(0).uniform(size=(100, 2))
        v = empirical_variogram(Dataset(pts, np.full(100, 2.0)))
        assert np.all(v.semivariance[v.counts > 0] == 0)

    def test_brute_force(self):
        rng = np.random.default_rng(1)
        pts, y = rng.uniform(size=(80, 2)), rng.standard_normal(80)
        v = empirical_variogram(Dataset(pts, y), n_bins=7, max_dist=0.6)
        ref, counts = brute_variogram(pts, y, v.bin_edges)
        np.testing.assert_array_equal(v.counts, counts)
        np.testing.assert_allclose(v.semivariance, ref, rtol=1e-12)

    def test_iid_noise(self):
        rng = np.random.default_rng(2)
        pts, y = rng.uniform(size=(3000, 2)), rng.normal(0, np.sqrt(2.0), size=3000)
        v = empirical_variogram(Dataset(pts, y))
        assert np.all(np.abs(v.semivariance / 2.0 - 1) <= 0.15)

    def test_sill(self):
        pts = np.random.default_rng(3).uniform(size=(2500, 2))
        y = simulate_gp(pts, MaternParams(1, 0.03, 1, 0.2), seed=4)
        v = empirical_variogram(Dataset(pts, y))
        assert v.semivariance[0] > 0.8 * 0.2
        assert v.semivariance[-1] == pytest.approx(1.2, rel=0.2)

    def test_pair_subsample(self):
        rng = np.random.default_rng(5)
        pts, y = rng.uniform(size=(500, 2)), rng.standard_normal(500)
        d = Dataset(pts, y)
        a = empirical_variogram(d, max_pairs=5000, seed=1)
        assert a.counts.sum() <= 5000
        np.testing.assert_array_equal(a.semivariance, empirical_variogram(d, max_pairs=5000, seed=1).semivariance)

    def test_too_small(self):
        with pytest.raises(ValueError):
            empirical_variogram(Dataset([[0.0, 0.0]], [1.0]))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 120), st.integers(0, 2**31))
    def test_permutation_invariant(self, n, seed):
        rng = np.random.default_rng(seed)
        pts, y = rng.uniform(size=(n, 2)), rng.standard_normal(n)
        perm = rng.permutation(n)
        a = empirical_variogram(Dataset(pts, y), n_bins=5, max_dist=0.7)
        b = empirical_variogram(Dataset(pts[perm], y[perm]), n_bins=5, max_dist=0.7)
        np.testing.assert_array_equal(a.counts, b.counts)
        np.testing.assert_allclose(a.semivariance, b.semivariance, rtol=1e-12)
        assert np.all(a.semivariance[a.counts > 0] >= 0)
