"""Synthetic data: Gaussian-process draws, point patterns on the unit
square, and empirical semivariograms."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geoindex import domain_diagonal
from .likelihood import SizeGuardError
from .model import MeanSpec, as_points, cov_matrix, design_matrix
from .numerics import cholesky

__all__ = [
    "SIM_SIZE_GUARD",
    "PatternKind",
    "PatternSpec",
    "VariogramEstimate",
    "simulate_gp",
    "generate_pattern",
    "empirical_variogram",
]

SIM_SIZE_GUARD = 12_000
DEFAULT_CLUSTER_CENTERS = ((0.2, 0.25), (0.5, 0.2), (0.8, 0.3), (0.25, 0.7), (0.55, 0.78), (0.8, 0.65))


def simulate_gp(points, params, mean=MeanSpec.ZERO, beta=None, seed=0, guard=SIM_SIZE_GUARD):
    """One realization ``trend + L z`` of the noisy field at `points`.

    ``z`` comes from ``default_rng(seed).standard_normal(n)``.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if n > guard:
        raise SizeGuardError(f"dense simulation on {n} points exceeds guard {guard}")
    mean = MeanSpec(mean)
    lower = cholesky(cov_matrix(pts, None, params, shared_sites=True), check_symmetric=False).lower
    z = np.random.default_rng(seed).standard_normal(n)
    y = lower @ z
    if mean is not MeanSpec.ZERO:
        beta = np.zeros(mean.n_columns) if beta is None else np.asarray(beta, dtype=float)
        if beta.shape != (mean.n_columns,):
            raise ValueError(f"{mean.value} trend needs {mean.n_columns} coefficients")
        y = y + design_matrix(pts, mean) @ beta
    return y


# ---------------------------------------------------------------------------
# Point patterns
# ---------------------------------------------------------------------------


class PatternKind(str, Enum):
    HOMOGENEOUS = "homogeneous"
    DENSE_SUBREGION = "dense_subregion"
    NESTED_DENSITY = "nested_density"
    STRIPED_GAPS = "striped_gaps"
    CIRCULAR_CLUSTERS = "circular_clusters"


@dataclass(frozen=True)
class PatternSpec:
    """Point-pattern recipe on the unit square.

    Rectangles are ``(x0, y0, x1, y1)``; stripes are horizontal bands
    ``(y0, y1)``. When `stripes` is None, `n_stripes` bands of width
    `stripe_width` are centred at ``(j + 0.5) / n_stripes``.
    """

    kind: str = "homogeneous"
    n: int = 1000
    seed: int = 0
    subregion: tuple = (0.0, 0.0, 1.0, 0.5)
    fraction: float = 0.8
    nested: tuple = ((0.25, 0.25, 0.75, 0.75), (0.375, 0.375, 0.625, 0.625))
    ratios: tuple = (1.0, 4.0, 16.0)
    stripes: tuple = None
    n_stripes: int = 6
    stripe_width: float = 0.04
    centers: tuple = DEFAULT_CLUSTER_CENTERS
    radii: tuple = (0.06,)
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind).value)
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for rect in (self.subregion, *self.nested):
            x0, y0, x1, y1 = rect
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise ValueError(f"rectangle {rect} must lie inside the unit square")
        if not 0 <= self.fraction <= 1 or not 0 <= self.background <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if len(self.ratios) != len(self.nested) + 1 or min(self.ratios) <= 0:
            raise ValueError("need one positive density ratio per nested level")
        for c, r in zip(self.centers, self._cluster_radii()):
            if not (r > 0 and r <= c[0] <= 1 - r and r <= c[1] <= 1 - r):
                raise ValueError(f"cluster at {c} with radius {r} leaves the unit square")

    def _cluster_radii(self):
        r = tuple(self.radii)
        return r * len(self.centers) if len(r) == 1 else r

    def bands(self):
        if self.stripes is not None:
            return tuple((float(a), float(b)) for a, b in self.stripes)
        half = self.stripe_width / 2
        return tuple(
            (max(0.0, (j + 0.5) / self.n_stripes - half), min(1.0, (j + 0.5) / self.n_stripes + half))
            for j in range(self.n_stripes)
        )


def _in_rect(p, rect):
    x0, y0, x1, y1 = rect
    return (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)


def _uniform_in(rng, n, rect):
    x0, y0, x1, y1 = rect
    u = rng.uniform(size=(n, 2))
    return np.column_stack([x0 + (x1 - x0) * u[:, 0], y0 + (y1 - y0) * u[:, 1]])


def _rejection(rng, n, keep, rect=(0.0, 0.0, 1.0, 1.0)):
    """`n` uniform points in `rect` that satisfy `keep`, in draw order."""
    out = np.empty((0, 2))
    batch = max(64, n)
    tries = 0
    while out.shape[0] < n:
        cand = _uniform_in(rng, batch, rect)
        out = np.vstack([out, cand[keep(cand)]])
        tries += 1
        if tries > 10_000:
            raise ValueError("pattern region has (nearly) zero area")
    return out[:n]


def _band_cover(bands):
    """Total length of the union of bands within [0, 1]."""
    cover, end = 0.0, 0.0
    for a, b in sorted(bands):
        a, b = max(a, end), min(b, 1.0)
        if b > a:
            cover += b - a
            end = b
    return cover


def generate_pattern(spec):
    """Exactly ``spec.n`` points on the unit square following `spec`."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    kind = PatternKind(spec.kind)
    if kind is PatternKind.HOMOGENEOUS:
        return rng.uniform(size=(n, 2))
    if kind is PatternKind.DENSE_SUBREGION:
        n_in = int(rng.binomial(n, spec.fraction))
        inside = _uniform_in(rng, n_in, spec.subregion)
        outside = _rejection(rng, n - n_in, lambda p: ~_in_rect(p, spec.subregion))
        pts = np.vstack([inside, outside])
        return pts[rng.permutation(n)]
    if kind is PatternKind.NESTED_DENSITY:
        rects = ((0.0, 0.0, 1.0, 1.0),) + tuple(spec.nested)
        areas = [(r[2] - r[0]) * (r[3] - r[1]) for r in rects]
        ring = [areas[i] - (areas[i + 1] if i + 1 < len(areas) else 0.0) for i in range(len(areas))]
        w = np.array(ring) * np.array(spec.ratios)
        counts = rng.multinomial(n, w / w.sum())
        parts = []
        for i, c in enumerate(counts):
            inner = rects[i + 1] if i + 1 < len(rects) else None
            keep = (lambda p, r=inner: ~_in_rect(p, r)) if inner else (lambda p: np.ones(p.shape[0], bool))
            parts.append(_rejection(rng, int(c), keep, rects[i]))
        pts = np.vstack(parts)
        return pts[rng.permutation(n)]
    if kind is PatternKind.STRIPED_GAPS:
        bands = spec.bands()
        if _band_cover(bands) >= 1.0:
            raise ValueError("stripes cover the whole domain")

        def keep(p):
            ok = np.ones(p.shape[0], dtype=bool)
            for a, b in bands:
                ok &= ~((p[:, 1] >= a) & (p[:, 1] <= b))
            return ok

        return _rejection(rng, n, keep)
    # circular clusters
    centers = np.asarray(spec.centers, dtype=float)
    radii = np.asarray(spec._cluster_radii(), dtype=float)
    n_bg = int(rng.binomial(n, spec.background))
    which = rng.integers(len(centers), size=n - n_bg)
    r = radii[which] * np.sqrt(rng.uniform(size=n - n_bg))
    a = rng.uniform(0.0, 2.0 * np.pi, size=n - n_bg)
    clus = centers[which] + np.column_stack([r * np.cos(a), r * np.sin(a)])
    pts = np.vstack([clus, rng.uniform(size=(n_bg, 2))])
    return pts[rng.permutation(n)]


# ---------------------------------------------------------------------------
# Variogram
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariogramEstimate:
    """Binned semivariance; empty bins carry NaN semivariance and count 0."""

    bin_centers: np.ndarray
    semivariance: np.ndarray
    counts: np.ndarray
    bin_edges: np.ndarray = None


def empirical_variogram(data, n_bins=20, max_dist=None, max_pairs=1_000_000, seed=0):
    """Matheron semivariogram on equal-width distance bins.

    `max_dist` defaults to half the bounding-box diagonal. When there are
    more than `max_pairs` pairs, `max_pairs` pairs are drawn uniformly
    (with replacement) from a dedicated seeded stream.
    """
    pts, y = data.points, data.responses
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    if max_dist is None:
        max_dist = 0.5 * domain_diagonal(pts)
    if not max_dist > 0:
        raise ValueError("max_dist must be > 0")
    n_pairs = n * (n - 1) // 2
    if n_pairs <= max_pairs:
        i, j = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng([seed, 0x5EED])
        i = rng.integers(n, size=int(max_pairs))
        j = rng.integers(n - 1, size=int(max_pairs))
        j = j + (j >= i)
    d = np.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1])
    sq = (y[i] - y[j]) ** 2
    keep = d <= max_dist
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    b = np.minimum((d[keep] / max_dist * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=sq[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, 0.5 * sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return VariogramEstimate(centers, gamma, counts.astype(np.int64), edges)
