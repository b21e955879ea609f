"""Spatial search, max-min ordering, Vecchia conditioning sets, blocks and
de-clustering weights.

Indices are zero-based throughout. Ties in distance go to the smaller
index wherever the choice is ours to make.
"""

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import as_points

__all__ = [
    "KdTree",
    "VecchiaPlan",
    "BlockPartition",
    "DeclusterWeights",
    "build_kdtree",
    "maxmin_order",
    "maxmin_order_exact",
    "maxmin_order_fast",
    "neighbor_sets",
    "voronoi_partition",
    "decluster_weights",
    "default_weight_radius",
    "default_n_blocks",
    "weighted_subsample",
    "domain_diagonal",
]

LEAF_SIZE = 16
EXACT_MAXMIN_LIMIT = 10_000


def _sqdist_to(points, p):
    d = points - p
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])


def domain_diagonal(points):
    pts = as_points(points)
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(np.hypot(span[0], span[1]))


class KdTree:
    """Balanced kd-tree over a fixed point set (leaves hold at most 16 points).

    Thin wrapper around :class:`scipy.spatial.cKDTree`; queries are exact.
    """

    def __init__(self, points):
        self.points = as_points(points)
        if self.points.shape[0] == 0:
            raise ValueError("cannot build a kd-tree on an empty point set")
        self._tree = cKDTree(self.points, leafsize=LEAF_SIZE, balanced_tree=True, compact_nodes=True)

    @property
    def n(self):
        return self.points.shape[0]

    def query(self, x, k=1):
        """Distances and indices of the `k` nearest points, nearest first.

        Always returns 2-D arrays of shape (n_queries, k).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = int(min(k, self.n))
        d, i = self._tree.query(x, k=k)
        return d.reshape(x.shape[0], k), i.reshape(x.shape[0], k)

    def query_radius(self, x, r, p=2.0):
        """Indices of points within distance `r` (inclusive) of each query."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._tree.query_ball_point(x, r, p=p)

    def count_radius(self, x, r):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self._tree.query_ball_point(x, r, return_length=True))


def build_kdtree(points):
    return KdTree(points)


# ---------------------------------------------------------------------------
# Max-min ordering
# ---------------------------------------------------------------------------


def _first_point(pts):
    centroid = pts.mean(axis=0)
    return int(np.argmin(_sqdist_to(pts, centroid)))


def maxmin_order_exact(points):
    """O(n^2) greedy max-min ordering.

    Starts from the point nearest the centroid; each next point maximizes
    its minimum distance to the points already ordered.
    """
    pts = as_points(points)
    n = pts.shape[0]
    order = np.empty(n, dtype=np.int64)
    first = _first_point(pts)
    order[0] = first
    mind = _sqdist_to(pts, pts[first])
    mind[first] = -1.0
    for k in range(1, n):
        j = int(np.argmax(mind))
        order[k] = j
        np.minimum(mind, _sqdist_to(pts, pts[j]), out=mind)
        mind[j] = -1.0
    return order


def maxmin_order_fast(points):
    """Max-min ordering with lazy heap updates and kd-tree ball queries.

    Produces the same permutation as :func:`maxmin_order_exact`: when a
    point p is selected at distance l, only unordered points within l of p
    can have their minimum distance reduced, and those are found with a
    ball query.
    """
    pts = as_points(points)
    n = pts.shape[0]
    tree = cKDTree(pts, leafsize=LEAF_SIZE)
    order = np.empty(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    first = _first_point(pts)
    order[0] = first
    done[first] = True
    mind = _sqdist_to(pts, pts[first])
    heap = [(-mind[i], i) for i in range(n) if i != first]
    heapq.heapify(heap)
    for k in range(1, n):
        while True:
            negd, j = heapq.heappop(heap)
            if not done[j] and -negd == mind[j]:
                break
        order[k] = j
        done[j] = True
        radius = mind[j] * (1.0 + 1e-9)
        cand = np.asarray(tree.query_ball_point(pts[j], radius), dtype=np.int64)
        if cand.size:
            cand = cand[~done[cand]]
            dnew = _sqdist_to(pts[cand], pts[j])
            better = dnew < mind[cand]
            for i, d in zip(cand[better].tolist(), dnew[better].tolist()):
                mind[i] = d
                heapq.heappush(heap, (-d, i))
    return order


def maxmin_order(points):
    """Max-min ordering; exact O(n^2) scan up to 10^4 points, heap variant above."""
    pts = as_points(points)
    if pts.shape[0] <= EXACT_MAXMIN_LIMIT:
        return maxmin_order_exact(pts)
    return maxmin_order_fast(pts)


# ---------------------------------------------------------------------------
# Conditioning sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VecchiaPlan:
    """Ordering plus conditioning sets.

    Attributes
    ----------
    order : ndarray of int
        ``order[k]`` is the original index of the k-th ordered point.
    neighbors : ndarray of int, shape (n, m)
        Row k lists the ordered positions in g(k), ascending, padded with -1.
    counts : ndarray of int
        ``|g(k)| = min(k, m)``.
    m : int
        Target conditioning-set size.
    """

    order: np.ndarray
    neighbors: np.ndarray
    counts: np.ndarray
    m: int

    @property
    def n(self):
        return self.order.shape[0]

    def conditioning_set(self, k):
        return self.neighbors[k, : self.counts[k]]


def neighbor_sets(points, order, m):
    """Nearest previously-ordered neighbors for every point in `order`.

    Positions are processed in doubling chunks ``[s, 2s)``; each chunk
    queries a kd-tree over ordered positions ``[0, 2s)``, keeps
    predecessors only, and widens the query for rows that come up short.
    """
    pts = as_points(points)
    order = np.asarray(order, dtype=np.int64)
    n = order.shape[0]
    m = int(m)
    if m < 0:
        raise ValueError("m must be >= 0")
    opts = pts[order]
    nbrs = np.full((n, max(m, 0)), -1, dtype=np.int64)
    counts = np.minimum(np.arange(n), m).astype(np.int64)
    if m == 0 or n <= 1:
        return VecchiaPlan(order, nbrs.reshape(n, m), counts, m)

    # brute force while the history is short
    head = min(n, 2 * m + 2)
    for k in range(1, head):
        d = _sqdist_to(opts[:k], opts[k])
        sel = np.lexsort((np.arange(k), d))[: counts[k]]
        nbrs[k, : counts[k]] = np.sort(sel)

    s = head
    while s < n:
        e = min(n, 2 * s)
        tree = cKDTree(opts[:e], leafsize=LEAF_SIZE)
        rows = np.arange(s, e)
        kq = min(e, 2 * m + 2)
        while rows.size:
            d, idx = tree.query(opts[rows], k=kq)
            d = d.reshape(rows.size, kq)
            idx = idx.reshape(rows.size, kq)
            valid = idx < rows[:, None]
            ok = valid.sum(axis=1) >= m
            if kq >= e:
                ok[:] = True
            for r in np.nonzero(ok)[0]:
                k = rows[r]
                keep = valid[r]
                cand, cd = idx[r][keep], d[r][keep]
                sel = cand[np.lexsort((cand, cd))][:m]
                nbrs[k, : sel.size] = np.sort(sel)
            rows = rows[~ok]
            kq = min(e, 2 * kq)
        s = e
    return VecchiaPlan(order, nbrs, counts, m)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockPartition:
    """Nearest-center partition of the sites.

    Block ids run 0..n_blocks-1; ``centers[b]`` is the site seeding block b.
    """

    n_blocks: int
    assignment: np.ndarray
    centers: np.ndarray

    def members(self, b):
        return np.flatnonzero(self.assignment == b)

    def blocks(self):
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.n_blocks + 1))
        return [order[bounds[b] : bounds[b + 1]] for b in range(self.n_blocks)]


def default_n_blocks(n):
    return max(1, n // 500)


def voronoi_partition(points, n_blocks, seed=0):
    """Random-center Voronoi blocks.

    Centers are drawn uniformly without replacement; each point goes to
    its nearest center, ties to the smaller center index. Centers that
    coincide with an earlier center own no points and are dropped, so the
    returned ``n_blocks`` can be smaller than requested.
    """
    pts = as_points(points)
    n = pts.shape[0]
    n_blocks = int(n_blocks)
    if not 1 <= n_blocks <= n:
        raise ValueError(f"n_blocks must lie in [1, {n}], got {n_blocks}")
    rng = np.random.default_rng(seed)
    centers = np.sort(rng.choice(n, size=n_blocks, replace=False))
    if n_blocks == 1:
        return BlockPartition(1, np.zeros(n, dtype=np.int64), centers)
    tree = cKDTree(pts[centers], leafsize=LEAF_SIZE)
    d, idx = tree.query(pts, k=2)
    assign = idx[:, 0].copy()
    tie = d[:, 0] == d[:, 1]
    assign[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
    used = np.unique(assign)
    if used.size < n_blocks:
        relabel = np.full(n_blocks, -1, dtype=np.int64)
        relabel[used] = np.arange(used.size)
        assign = relabel[assign]
        centers = centers[used]
    return BlockPartition(int(centers.size), assign.astype(np.int64), centers)


# ---------------------------------------------------------------------------
# De-clustering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeclusterWeights:
    weights: np.ndarray
    radius: float


def default_weight_radius(points):
    """5% of the bounding-box diagonal."""
    return 0.05 * domain_diagonal(points)


def decluster_weights(points, radius=None):
    """Inverse local-count sampling weights, normalized to sum to one.

    ``count_i`` is the number of sites (self included) within `radius`
    of site i.
    """
    pts = as_points(points)
    if radius is None:
        radius = default_weight_radius(pts)
        if radius <= 0:
            radius = 1.0
    radius = float(radius)
    if not radius > 0:
        raise ValueError("radius must be > 0")
    counts = cKDTree(pts, leafsize=LEAF_SIZE).query_ball_point(pts, radius, return_length=True)
    raw = 1.0 / np.asarray(counts, dtype=float)
    return DeclusterWeights(raw / raw.sum(), radius)


def weighted_subsample(points, weights, size, seed=0):
    """Weighted sampling without replacement.

    Equivalent in distribution to drawing one index at a time with
    probability proportional to the remaining weights; implemented with
    exponential keys ``E_i / w_i`` (Efraimidis-Spirakis), returned in draw
    order.
    """
    w = weights.weights if isinstance(weights, DeclusterWeights) else np.asarray(weights, dtype=float)
    n = w.shape[0]
    if points is not None and as_points(points).shape[0] != n:
        raise ValueError("weights and points differ in length")
    size = int(size)
    if size > n:
        raise ValueError(f"subsample size {size} exceeds {n} points")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with positive total")
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=n)
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, e / np.where(w > 0, w, 1.0), np.inf)
    return np.argsort(keys, kind="stable")[:size].astype(np.int64)
