"""Feature-space diagnostics: K-means, cluster validity indices, 2-D export."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from . import tensor as T


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sqdist(points, centroids):
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
    return d


def _kmeanspp(points, k, rng):
    n = len(points)
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sqdist(points, np.array(centers)).min(axis=1)
        total = d2.sum()
        idx = rng.integers(n) if total == 0 else rng.choice(n, p=d2 / total)
        centers.append(points[idx])
    return np.array(centers, dtype=np.float64)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    Stops when assignments stop changing. An empty cluster is re-seeded with
    the point farthest from its current centroid; distance ties go to the
    lowest cluster index.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"points must be (n, d), got {x.shape}")
    if not 1 <= k <= len(x):
        raise ValueError(f"k={k} invalid for {len(x)} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    assign = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sqdist(x, centroids)
        new = np.argmin(d, axis=1)
        for j in range(k):
            if not np.any(new == j):
                far = int(np.argmax(d[np.arange(len(x)), new]))
                new[far] = j
                d[far] = np.inf
                d[far, j] = 0.0
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centroids = np.array([x[assign == j].mean(axis=0) for j in range(k)])
        history.append(float(((x - centroids[assign]) ** 2).sum()))
    return KMeansResult(assign, centroids, history, it)


# ---------------------------------------------------------------- internal

@dataclass
class InternalIndices:
    silhouette: float
    calinski_harabasz: float
    dunn: float
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)


def _pairwise(x):
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def internal_indices(points, assignments) -> InternalIndices:
    """Silhouette, Calinski-Harabasz and Dunn indices (Euclidean).

    Degenerate inputs (fewer than two clusters, as many clusters as points,
    zero within-cluster dispersion or zero diameter) return NaNs with
    ``degenerate=True``.
    """
    x = np.asarray(points, dtype=np.float64)
    lab = np.unique(np.asarray(assignments), return_inverse=True)[1]
    n, k = len(x), lab.max() + 1 if len(lab) else 0
    nan = InternalIndices(np.nan, np.nan, np.nan, True)
    if k < 2 or k >= n:
        return nan
    dist = _pairwise(x)
    counts = np.bincount(lab, minlength=k)
    # mean distance from each point to each cluster
    sums = np.stack([dist[:, lab == j].sum(1) for j in range(k)], axis=1)
    own = counts[lab]
    a = sums[np.arange(n), lab] / np.maximum(own - 1, 1)
    means = sums / counts[None, :]
    means[np.arange(n), lab] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1), 0.0)
    s[own == 1] = 0.0
    centroids = np.array([x[lab == j].mean(0) for j in range(k)])
    overall = x.mean(0)
    between = float((counts * ((centroids - overall) ** 2).sum(1)).sum())
    within = float(((x - centroids[lab]) ** 2).sum())
    same = lab[:, None] == lab[None, :]
    diameter = dist[same].max()
    separation = dist[~same].min()
    if within == 0 or diameter == 0:
        return InternalIndices(float(s.mean()), np.nan, np.nan, True)
    ch = (between / (k - 1)) / (within / (n - k))
    return InternalIndices(float(s.mean()), float(ch), float(separation / diameter))


# ---------------------------------------------------------------- external

@dataclass
class ExternalIndices:
    ari: float
    ami: float
    fmi: float

    def to_dict(self):
        return asdict(self)


def contingency(assignments, labels) -> np.ndarray:
    _, a = np.unique(np.asarray(assignments), return_inverse=True)
    _, b = np.unique(np.asarray(labels), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _comb2(v):
    v = np.asarray(v, dtype=np.float64)
    return v * (v - 1) / 2.0


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def expected_mutual_information(table: np.ndarray) -> float:
    """E[MI] under the permutation (hypergeometric) model, natural log."""
    n = int(table.sum())
    a = table.sum(1)
    b = table.sum(0)
    emi = 0.0
    lg_n = gammaln(n + 1)
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            term1 = nij / n * (np.log(n * nij) - np.log(ai * bj))
            log_p = (gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                     - lg_n - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                     - gammaln(n - ai - bj + nij + 1))
            emi += float((term1 * np.exp(log_p)).sum())
    return emi


def external_indices(assignments, labels) -> ExternalIndices:
    """ARI, AMI (max-entropy normalization) and Fowlkes-Mallows index."""
    table = contingency(assignments, labels)
    n = table.sum()
    a, b = table.sum(1), table.sum(0)
    sum_ij = _comb2(table).sum()
    sum_a, sum_b = _comb2(a).sum(), _comb2(b).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    ari = 1.0 if max_index == expected else float((sum_ij - expected) / (max_index - expected))

    if table.shape[0] == table.shape[1] == 1 or table.shape[0] == table.shape[1] == n:
        ami = 1.0
    else:
        nz = table > 0
        outer = np.outer(a, b)
        mi = float((table[nz] / n * (np.log(table[nz] * n) - np.log(outer[nz]))).sum())
        emi = expected_mutual_information(table)
        denom = max(_entropy(a), _entropy(b)) - emi
        ami = float((mi - emi) / denom) if denom != 0 else 0.0

    fmi = float(sum_ij / np.sqrt(sum_a * sum_b)) if sum_ij > 0 else 0.0
    return ExternalIndices(ari, ami, fmi)


@dataclass
class ClusterReport:
    assignments: list[int]
    internal: dict
    external: dict | None

    def to_dict(self):
        return asdict(self)


def cluster_report(points, k: int, labels=None, seed: int = 0) -> ClusterReport:
    km = kmeans(points, k, seed)
    internal = internal_indices(points, km.assignments).to_dict()
    external = external_indices(km.assignments, labels).to_dict() if labels is not None else None
    return ClusterReport(km.assignments.tolist(), internal, external)


# ---------------------------------------------------------------- features

def feature_vectors(model, images, tasks, tap: str = "d2.post", batch_size: int = 8) -> np.ndarray:
    """Spatially averaged tapped features, one row per image.

    ``tasks`` gives the task prompt for each image (or one task for all).
    """
    images = np.asarray(images)
    per = [tasks] * len(images) if isinstance(tasks, str) else list(tasks)
    rows = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            x = T.Tensor(images[i:i + batch_size].astype(model_dtype(model)))
            _, taps = model.forward_with_taps(x, per[i:i + batch_size], (tap,))
            rows.append(taps[tap].data.mean(axis=(2, 3)))
    return np.concatenate(rows, axis=0).astype(np.float64)


def model_dtype(model):
    return next(iter(model.parameters())).dtype


def project_2d(points, seed: int = 0) -> np.ndarray:
    """PCA projection onto the top two principal axes.

    Signs are fixed so each axis has a positive largest-magnitude loading, so
    the output is deterministic; ``seed`` is accepted for interface symmetry
    with stochastic embedders and does not affect the result.
    """
    x = np.asarray(points, dtype=np.float64)
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((2 - axes.shape[0], x.shape[1]))])
    for i in range(axes.shape[0]):
        j = np.argmax(np.abs(axes[i]))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return xc @ axes.T
