"""PCA plus k-means baseline.

The number of factors is the Kaiser count (correlation eigenvalues above
one); the number of clusters is chosen by the gap statistic on the principal
component scores of the standardized data.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.decomposition import PCA

from .kernels import RngStream, as_generator
from .model import Dataset, kmeans_objective, kmeans_restarts

__all__ = [
    "GapResult",
    "correlation_eigenvalues",
    "kaiser_count",
    "pca_scores",
    "within_dispersion",
    "gap_statistic",
    "pca_kmeans_pipeline",
]


def _check_columns(data: Dataset):
    sd = data.Y.std(axis=0)
    if np.any(sd == 0):
        bad = int(np.flatnonzero(sd == 0)[0])
        raise ValueError(f"column {data.variable_names[bad]!r} is constant")


def correlation_eigenvalues(data: Dataset) -> np.ndarray:
    """Eigenvalues of the sample correlation matrix, largest first."""
    _check_columns(data)
    return np.linalg.eigvalsh(np.corrcoef(data.Y, rowvar=False))[::-1]


def kaiser_count(data: Dataset) -> int:
    """Number of correlation eigenvalues strictly greater than one."""
    return int(np.sum(correlation_eigenvalues(data) > 1.0))


def pca_scores(data: Dataset, n_components: int) -> np.ndarray:
    """Scores of the standardized data on the leading principal components."""
    _check_columns(data)
    Z = data.standardized().Y
    return PCA(n_components=n_components, svd_solver="full").fit_transform(Z)


def within_dispersion(X, labels) -> float:
    """``W = sum_k (1 / (2 n_k)) sum_{i, j in k} ||x_i - x_j||^2``.

    Equal to the within-cluster sum of squared distances to the centroids.
    """
    X = np.asarray(X, dtype=float)
    W = 0.0
    for k in np.unique(labels):
        Xk = X[labels == k]
        W += ((Xk - Xk.mean(0)) ** 2).sum()
    return float(W)


@dataclass
class GapResult:
    K_hat: int
    gap: np.ndarray  # gap(K), K = 1..K_max
    sk: np.ndarray  # simulation standard errors including sqrt(1 + 1/B)
    B_refs: int
    log_W: np.ndarray = None
    log_W_ref: np.ndarray = None  # (B_refs, K_max)

    @property
    def K_max(self):
        return len(self.gap)


def _log_w(X, K, restarts, gen):
    labels, centers = kmeans_restarts(X, K, restarts=restarts, rng=gen, criterion="inertia")
    return np.log(kmeans_objective(X, labels, centers, "inertia"))


def gap_statistic(X, K_max: int, B_refs: int = 50, rng=None, restarts: int = 50) -> GapResult:
    """Gap statistic with uniform references over the bounding box of ``X``.

    For each K the data and every reference set are clustered by
    :func:`~bcfm.model.kmeans_restarts` (restarts compared by within-cluster
    sum of squares, the dispersion being measured).  ``K_hat`` is the smallest
    K with ``gap(K) >= gap(K+1) - sk(K+1)``, or ``K_max`` if none qualifies.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if K_max < 1 or B_refs < 1:
        raise ValueError("K_max and B_refs must be >= 1")
    gen = as_generator(RngStream(0) if rng is None else rng)
    Ks = range(1, K_max + 1)
    log_W = np.array([_log_w(X, K, restarts, gen) for K in Ks])
    lo, hi = X.min(0), X.max(0)
    log_W_ref = np.empty((B_refs, K_max))
    for b in range(B_refs):
        ref = lo + (hi - lo) * gen.random(X.shape)
        log_W_ref[b] = [_log_w(ref, K, restarts, gen) for K in Ks]
    gap = log_W_ref.mean(0) - log_W
    sk = log_W_ref.std(0) * np.sqrt(1.0 + 1.0 / B_refs)
    K_hat = K_max
    for K in range(1, K_max):
        if gap[K - 1] >= gap[K] - sk[K]:
            K_hat = K
            break
    return GapResult(K_hat, gap, sk, B_refs, log_W, log_W_ref)


def pca_kmeans_pipeline(data: Dataset, K_max: int = 5, rng=None, B_refs: int = 50,
                        restarts: int = 50, return_gap: bool = False):
    """Kaiser factor count, then gap-statistic cluster count on PCA scores.

    Returns ``(F_hat, K_hat)``, plus the :class:`GapResult` if ``return_gap``.
    A Kaiser count of zero falls back to one component with a warning.
    """
    F_hat = kaiser_count(data)
    if F_hat == 0:
        warnings.warn("no correlation eigenvalue exceeds 1; using one principal component")
        F_hat = 1
    scores = pca_scores(data, F_hat)
    gap = gap_statistic(scores, K_max, B_refs=B_refs, rng=rng, restarts=restarts)
    if return_gap:
        return F_hat, gap.K_hat, gap
    return F_hat, gap.K_hat
