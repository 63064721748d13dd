"""Geometry and cluster-validity mathematics.

Everything downstream measurement needs lives here: K-means with
k-means++ seeding, the Hopkins clustering-tendency statistic, two BIC
scores for choosing the cluster count, the Calinski-Harabasz index, the
contingency table and adjusted Rand index for comparing partitions, and
the mean pairwise distance used as content diversity.

All operations are pure given an explicit seed and run in double
precision. Point counts here are desk scale (up to ~10^4), so distances
are exact; no approximate neighbor structures are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import DegenerateGeometryError, IntegrityError
from .seeds import derive_seed


@dataclass(frozen=True)
class PointSet:
    """N points of dimension D with aligned, unique ids."""

    ids: tuple[str, ...]
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {pts.shape}")
        if len(self.ids) != pts.shape[0]:
            raise ValueError(f"{len(self.ids)} ids for {pts.shape[0]} points")
        if len(set(self.ids)) != len(self.ids):
            raise IntegrityError("point ids must be unique")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Partition:
    """K-means result: labels in [0, k), per-cluster centroids and sizes.

    Every cluster is non-empty and each centroid is the mean of its
    members. ``inertia_history`` records the within-cluster sum of
    squares after each Lloyd iteration (non-increasing).
    """

    k: int
    labels: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("labels", "centroids", "sizes"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    def validate(self, point_set: PointSet, rtol: float = 1e-9) -> None:
        """Check the partition invariants against its point set."""
        X = point_set.points
        if self.labels.shape != (len(point_set),):
            raise ValueError("labels misaligned with points")
        if self.sizes.sum() != len(point_set) or np.any(self.sizes < 1):
            raise ValueError("cluster sizes must be positive and sum to N")
        for i in range(self.k):
            members = X[self.labels == i]
            mean = members.mean(axis=0)
            scale = max(1.0, float(np.abs(mean).max()))
            if np.abs(mean - self.centroids[i]).max() > rtol * scale:
                raise ValueError(f"centroid {i} is not the mean of its members")


@dataclass(frozen=True)
class ContingencyTable:
    """Cross-tabulation of two partitions of the same N points."""

    counts: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray
    total: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def _squared_distances(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d2 = x_sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    first = rng.integers(n)
    centers[0] = X[first]
    if k == 1:
        return centers
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[i] = X[pick]
        np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1), out=d2)
    return centers


def _cluster_means(X: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.bincount(labels, minlength=k)
    sums = np.empty((k, X.shape[1]), dtype=np.float64)
    for d in range(X.shape[1]):
        sums[:, d] = np.bincount(labels, weights=X[:, d], minlength=k)
    return sums / np.maximum(sizes, 1)[:, None], sizes


def _repair_empty(
    labels: np.ndarray, d2: np.ndarray, sizes: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Move the point farthest from its centroid into each empty cluster."""
    assigned = d2[np.arange(len(labels)), labels].copy()
    for empty in np.flatnonzero(sizes == 0):
        donors = np.flatnonzero(sizes[labels] > 1)
        if donors.size == 0:
            break
        worst = donors[np.argmax(assigned[donors])]
        sizes[labels[worst]] -= 1
        labels[worst] = empty
        sizes[empty] += 1
        assigned[worst] = 0.0
    return labels, sizes


def kmeans(
    point_set: PointSet,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> Partition:
    """Lloyd iterations from k-means++ seeding, deterministic per seed.

    Nearest-centroid ties break toward the lowest cluster index; a
    cluster emptied during assignment is repaired by moving in the point
    farthest from its current centroid. Iteration stops when the largest
    centroid movement falls below ``tol`` or after ``max_iter`` rounds.
    """
    n = len(point_set)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    X = point_set.points
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)
    x_sq = (X * X).sum(axis=1)

    labels = np.zeros(n, dtype=np.intp)
    sizes = np.zeros(k, dtype=np.intp)
    history: list[float] = []
    prev_sse = math.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _squared_distances(X, centroids, x_sq)
        labels = d2.argmin(axis=1)
        sizes = np.bincount(labels, minlength=k)
        if np.any(sizes == 0):
            labels, sizes = _repair_empty(labels, d2, sizes, k)
        new_centroids, sizes = _cluster_means(X, labels, k)
        # SSE identity for centroids that are cluster means.
        sse = float(x_sq.sum() - (sizes * (new_centroids * new_centroids).sum(axis=1)).sum())
        sse = max(sse, 0.0)
        if sse > prev_sse * (1.0 + 1e-9) + 1e-9:
            raise AssertionError(
                f"Lloyd iteration increased within-cluster SS: {prev_sse} -> {sse}"
            )
        history.append(sse)
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        prev_sse = sse
        if shift < tol:
            break

    return Partition(
        k=k,
        labels=labels.astype(np.intp),
        centroids=centroids,
        sizes=sizes.astype(np.intp),
        inertia=prev_sse,
        n_iter=n_iter,
        inertia_history=tuple(history),
    )


def hopkins(point_set: PointSet, m: int, seed: int) -> float:
    """Hopkins clustering-tendency statistic, in [0, 1].

    m real points are sampled from the data without replacement; m
    reference points are drawn uniformly in the data's axis-aligned
    bounding box. With s the nearest-other-point distances of the real
    sample and t the nearest-point distances of the uniform sample,
    H = sum(t) / (sum(s) + sum(t)). Around 0.5 means spatially random
    data; near 1 means strongly clustered.
    """
    n = len(point_set)
    if n < 4:
        raise ValueError(f"hopkins needs at least 4 points, got {n}")
    if not 2 <= m <= n // 2:
        raise ValueError(f"m must be in [2, N/2] = [2, {n // 2}], got {m}")
    X = point_set.points
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    if np.all(hi == lo):
        raise DegenerateGeometryError("all points identical; Hopkins denominator is zero")
    rng = np.random.default_rng(seed)
    sample_idx = rng.choice(n, size=m, replace=False)
    uniform = rng.uniform(lo, hi, size=(m, X.shape[1]))

    tree = cKDTree(X)
    t_dist, _ = tree.query(uniform, k=1)
    d, idx = tree.query(X[sample_idx], k=2)
    # The nearest hit is the sampled point itself unless a duplicate
    # coordinate exists, in which case distance 0 to the twin is correct.
    s_dist = np.where(idx[:, 0] == sample_idx, d[:, 1], d[:, 0])

    denom = float(s_dist.sum() + t_dist.sum())
    if denom == 0.0:
        raise DegenerateGeometryError("Hopkins denominator is zero")
    return float(t_dist.sum() / denom)


def bic_penalty(k: int, n_points: int, dim: int) -> float:
    """Model-complexity penalty K(D+1)·log(N)/2 shared by both variants."""
    return 0.5 * k * (dim + 1) * math.log(n_points)


def bic(
    point_set: PointSet,
    partition: Partition,
    variant: str = "xmeans",
    squared_variance: bool = True,
) -> float:
    """Partition-clustering BIC score; higher is better.

    ``xmeans`` is the standard spherical-Gaussian score: hard-assignment
    log-likelihood with pooled per-dimension variance, minus the penalty.
    ``paper`` evaluates the literal published per-cluster form
    sum_i n_i·(log(n_i/N) - n_i·D·log(2·pi·S)/2 - D·(n_i-1)/2) - penalty
    with S the pooled variance. ``squared_variance=False`` makes the
    ``paper`` variant pool unsquared distances instead, as printed.
    """
    if variant not in ("paper", "xmeans"):
        raise ValueError(f"unknown BIC variant {variant!r}")
    n = len(point_set)
    k = partition.k
    if n <= k:
        raise ValueError(f"pooled variance needs N > K, got N={n} K={k}")
    X = point_set.points
    diffs = X - partition.centroids[partition.labels]
    sq = (diffs * diffs).sum()
    sizes = partition.sizes.astype(np.float64)

    if variant == "xmeans":
        sigma2 = float(sq) / (X.shape[1] * (n - k))
        if sigma2 <= 0.0:
            raise DegenerateGeometryError("zero pooled variance; BIC undefined")
        loglik = (
            float((sizes * np.log(sizes / n)).sum())
            - 0.5 * n * X.shape[1] * math.log(2.0 * math.pi * sigma2)
            - 0.5 * X.shape[1] * (n - k)
        )
        return loglik - bic_penalty(k, n, X.shape[1])

    if squared_variance:
        pooled = float(sq) / (n - k)
    else:
        pooled = float(np.sqrt((diffs * diffs).sum(axis=1)).sum()) / (n - k)
    if pooled <= 0.0:
        raise DegenerateGeometryError("zero pooled variance; BIC undefined")
    d = X.shape[1]
    log_term = math.log(2.0 * math.pi * pooled)
    per_cluster = sizes * (
        np.log(sizes / n) - 0.5 * sizes * d * log_term - 0.5 * d * (sizes - 1.0)
    )
    return float(per_cluster.sum()) - bic_penalty(k, n, d)


def choose_k_from_curve(
    ks: Sequence[int],
    values: Sequence[float],
    strategy: str = "global_max",
    margin_frac: float = 0.01,
) -> int:
    """Pick k from an averaged BIC curve.

    ``global_max`` takes the curve's maximum (first index on ties).
    ``first_local_max`` walks left to right and returns the first local
    maximum that beats both neighbors by at least ``margin_frac`` of the
    curve's range, falling back to the global maximum when none is
    decisive.
    """
    if len(ks) != len(values) or not ks:
        raise ValueError("ks and values must be non-empty and aligned")
    vals = np.asarray(values, dtype=np.float64)
    if strategy == "global_max":
        return int(ks[int(np.argmax(vals))])
    if strategy != "first_local_max":
        raise ValueError(f"unknown strategy {strategy!r}")
    if len(vals) == 1:
        return int(ks[0])
    margin = margin_frac * float(vals.max() - vals.min())
    for i in range(len(vals)):
        left_ok = i == 0 or vals[i] >= vals[i - 1] + margin
        right_ok = i == len(vals) - 1 or vals[i] >= vals[i + 1] + margin
        if left_ok and right_ok:
            return int(ks[i])
    return int(ks[int(np.argmax(vals))])


def select_k(
    point_set: PointSet,
    k_range: Iterable[int],
    reps: int,
    seed: int,
    variant: str = "xmeans",
    strategy: str = "global_max",
) -> tuple[int, list[tuple[int, float]]]:
    """Average BIC over repeated seeded K-means runs for each k and pick
    the best k.

    Returns (k_star, curve) where curve is the list of (k, mean BIC)
    pairs in ascending k, suitable for export and plotting.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    n = len(point_set)
    for k in ks:
        if not 1 <= k < n:
            raise ValueError(f"every k must satisfy 1 <= k < N={n}, got {k}")
    curve: list[tuple[int, float]] = []
    for k in ks:
        vals = []
        for rep in range(reps):
            part = kmeans(point_set, k, seed=derive_seed(seed, "select_k", k, rep))
            vals.append(bic(point_set, part, variant=variant))
        curve.append((k, float(np.mean(vals))))
    k_star = choose_k_from_curve(ks, [v for _, v in curve], strategy=strategy)
    return k_star, curve


def calinski_harabasz(
    point_set: PointSet, labels: Sequence[int] | np.ndarray, weighted: bool = False
) -> float:
    """Calinski-Harabasz index (SSB/SSW)·((N-K)/(K-1)) for the supplied
    labels.

    Centroids are recomputed from the labels, so the same assignment can
    be scored against points from a different time. SSB follows the
    published unweighted form sum_i ||c_i - mean(X)||^2 by default;
    ``weighted=True`` applies the conventional cluster-size weights.
    """
    labels = np.asarray(labels)
    X = point_set.points
    n = len(point_set)
    if labels.shape != (n,):
        raise ValueError("labels misaligned with points")
    uniq, dense = np.unique(labels, return_inverse=True)
    k = len(uniq)
    if k < 2:
        raise ValueError(f"need at least 2 clusters, got {k}")
    if n <= k:
        raise ValueError(f"need N > K, got N={n} K={k}")
    centroids, sizes = _cluster_means(X, dense, k)
    ssw = float(((X - centroids[dense]) ** 2).sum())
    grand = X.mean(axis=0)
    sep = ((centroids - grand) ** 2).sum(axis=1)
    ssb = float((sizes * sep).sum()) if weighted else float(sep.sum())
    if ssw == 0.0:
        raise DegenerateGeometryError("zero within-cluster scatter; CH undefined")
    return (ssb / ssw) * ((n - k) / (k - 1))


def _align_labels(
    labels_p: Sequence[int] | np.ndarray,
    labels_q: Sequence[int] | np.ndarray,
    ids_p: Sequence[str] | None,
    ids_q: Sequence[str] | None,
) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(labels_p)
    q = np.asarray(labels_q)
    if (ids_p is None) != (ids_q is None):
        raise ValueError("provide ids for both partitions or neither")
    if ids_p is not None:
        if len(ids_p) != len(p) or len(ids_q) != len(q):
            raise ValueError("ids misaligned with labels")
        pos_q = {u: i for i, u in enumerate(ids_q)}
        if len(pos_q) != len(ids_q) or len(set(ids_p)) != len(ids_p):
            raise IntegrityError("partition ids must be unique")
        if set(ids_p) != set(pos_q):
            raise IntegrityError("partitions cover different id sets")
        q = q[[pos_q[u] for u in ids_p]]
    if p.shape != q.shape:
        raise ValueError(f"partitions have different sizes: {p.shape} vs {q.shape}")
    return p, q


def contingency_table(
    labels_p: Sequence[int] | np.ndarray,
    labels_q: Sequence[int] | np.ndarray,
    ids_p: Sequence[str] | None = None,
    ids_q: Sequence[str] | None = None,
) -> ContingencyTable:
    """Cross-tabulate two partitions: counts[i, j] = |P_i ∩ Q_j|.

    When ids are supplied the second partition is aligned to the first's
    id order; differing id sets raise IntegrityError.
    """
    p, q = _align_labels(labels_p, labels_q, ids_p, ids_q)
    _, p_dense = np.unique(p, return_inverse=True)
    _, q_dense = np.unique(q, return_inverse=True)
    k1 = int(p_dense.max()) + 1 if len(p_dense) else 0
    k2 = int(q_dense.max()) + 1 if len(q_dense) else 0
    counts = np.bincount(p_dense * k2 + q_dense, minlength=k1 * k2).reshape(k1, k2)
    counts.setflags(write=False)
    return ContingencyTable(
        counts=counts,
        row_sums=counts.sum(axis=1),
        col_sums=counts.sum(axis=0),
        total=int(counts.sum()),
    )


def _comb2(values: np.ndarray) -> int:
    v = values.astype(np.int64)
    return int((v * (v - 1) // 2).sum())


def adjusted_rand_index(
    labels_p: Sequence[int] | np.ndarray,
    labels_q: Sequence[int] | np.ndarray,
    ids_p: Sequence[str] | None = None,
    ids_q: Sequence[str] | None = None,
) -> float:
    """Chance-adjusted pair-counting agreement between two partitions.

    1.0 for identical partitions; expectation ~0 for independent random
    partitions. Computed from the contingency table as
    (index - expected) / (max_index - expected) over pair counts.
    """
    p, q = _align_labels(labels_p, labels_q, ids_p, ids_q)
    n = len(p)
    if n < 2:
        raise ValueError(f"ARI needs at least 2 points, got {n}")
    table = contingency_table(p, q)
    index = _comb2(table.counts.ravel())
    sum_p = _comb2(table.row_sums)
    sum_q = _comb2(table.col_sums)
    pairs = n * (n - 1) // 2
    expected = sum_p * sum_q / pairs
    max_index = 0.5 * (sum_p + sum_q)
    denom = max_index - expected
    if denom == 0.0:
        # Only both-all-singletons or both-one-cluster reach this point;
        # in each case the partitions are identical.
        shape = table.shape
        if shape[0] == shape[1] and (shape[0] == 1 or shape[0] == n):
            return 1.0
        raise DegenerateGeometryError("ARI denominator is zero for differing partitions")
    return float((index - expected) / denom)


def mean_pairwise_distance(vectors: np.ndarray | Sequence[Sequence[float]]) -> float:
    """Mean Euclidean distance over all unordered pairs of vectors."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"vectors must be 2-D, got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 vectors, got {X.shape[0]}")
    return float(pdist(X).mean())
