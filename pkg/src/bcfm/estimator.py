"""scikit-learn style wrappers.

:class:`BCFM` fits one ``(K, F)`` model, :class:`BCFMSelector` chooses
``(K, F)`` by the information criterion, and :class:`PCAKMeans` is the
baseline.  Inputs are ``(n_samples, n_features)`` arrays.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.decomposition import PCA
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import kaiser_count, pca_kmeans_pipeline
from .gibbs import ChainConfig
from .kernels import RngStream
from .model import Dataset, ModelDims, kmeans_restarts
from .selection import (
    PosteriorPointEstimate,
    component_logdens,
    fit_model,
    grid_search,
    information_criterion,
)

__all__ = ["BCFM", "BCFMSelector", "PCAKMeans"]


def _dataset(X, names=None):
    X = check_array(X, dtype=float, ensure_min_samples=2, ensure_min_features=2)
    return Dataset(X, names)


class _ChainParams:
    """Shared chain settings and prediction from the posterior means."""

    def _chain_config(self):
        return ChainConfig(iterations=self.iterations, thin=self.thin,
                           burnin_draws=self.burnin, seed=self.random_state,
                           track_log_joint=False)

    def _prep(self, X):
        data = _dataset(X)
        if data.R != self.n_features_in_:
            raise ValueError(f"X has {data.R} features, expected {self.n_features_in_}")
        if self.standardize:
            data = Dataset((data.Y - self.mean_) / self.scale_)
        return data

    def _fit_prep(self, X):
        data = _dataset(X)
        self.n_features_in_ = data.R
        if self.standardize:
            self.mean_ = data.Y.mean(0)
            self.scale_ = data.Y.std(0, ddof=1)
            data = Dataset((data.Y - self.mean_) / self.scale_)
        return data

    def _set_chain(self, chain, data, dims):
        self.chain_ = chain
        self.estimate_ = PosteriorPointEstimate.from_chain(chain)
        self.ic_ = information_criterion(chain, data, dims)
        self.labels_ = chain.map_labels
        self.assign_prob_ = chain.assign_prob
        self.loadings_ = self.estimate_.B

    def predict_proba(self, X):
        """Cluster probabilities given ``y`` alone, at the posterior means.

        For the training subjects the sampled frequencies are in
        ``assign_prob_``; this method scores new observations.
        """
        check_is_fitted(self, "estimate_")
        lw = component_logdens(self._prep(X), self.estimate_)
        return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, X):
        """Posterior mean of the latent factors, ``E[x | y]``, at the posterior means."""
        check_is_fitted(self, "estimate_")
        data = self._prep(X)
        est = self.estimate_
        lw = component_logdens(data, est)
        resp = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        B, V = est.B, np.diag(est.sigma2)
        out = np.zeros((data.n, B.shape[1]))
        for k in range(est.K):
            Sig = B @ est.omega[k] @ B.T + V
            gain = np.linalg.solve(Sig, B @ est.omega[k]).T  # Omega B' Sig^-1
            mk = est.mu[k] + (data.Y - B @ est.mu[k]) @ gain.T
            out += resp[:, [k]] * mk
        return out

    def score(self, X, y=None):
        """Integrated log-likelihood of ``X`` at the posterior means."""
        check_is_fitted(self, "estimate_")
        return float(logsumexp(component_logdens(self._prep(X), self.estimate_), axis=1).sum())


class BCFM(_ChainParams, ClusterMixin, TransformerMixin, BaseEstimator):
    """Bayesian clustering factor model with fixed numbers of clusters and factors.

    Parameters
    ----------
    n_clusters, n_factors : int
        ``K`` and ``F``.
    iterations, thin, burnin : int
        Chain length, thinning interval and retained draws discarded.
    restarts : int
        k-means restarts used during prior elicitation.
    random_state : int
        Seed of the chain's random stream.
    standardize : bool
        Z-score the columns before fitting (off by default).

    Attributes
    ----------
    labels_ : modal cluster labels (0-based) of the training subjects
    assign_prob_ : (n, K) posterior membership frequencies
    chain_ : :class:`~bcfm.gibbs.ChainOutput`
    estimate_ : posterior means
    ic_ : :class:`~bcfm.selection.ICRecord`
    """

    def __init__(self, n_clusters=4, n_factors=3, iterations=50000, thin=10, burnin=1500,
                 restarts=50, random_state=0, standardize=False):
        self.n_clusters = n_clusters
        self.n_factors = n_factors
        self.iterations = iterations
        self.thin = thin
        self.burnin = burnin
        self.restarts = restarts
        self.random_state = random_state
        self.standardize = standardize

    def fit(self, X, y=None):
        data = self._fit_prep(X)
        dims = ModelDims(self.n_clusters, self.n_factors)
        dims.validate(data)
        chain, self.prior_, self.artifacts_ = fit_model(
            data, dims, self._chain_config(), restarts=self.restarts
        )
        self._set_chain(chain, data, dims)
        return self


class BCFMSelector(_ChainParams, ClusterMixin, TransformerMixin, BaseEstimator):
    """Choose ``(K, F)`` over a grid by the information criterion.

    After fitting, ``n_clusters_`` and ``n_factors_`` hold the selection,
    ``results_`` the :class:`~bcfm.selection.GridResult`, and prediction
    methods use the selected model's chain.
    """

    def __init__(self, cluster_range=(1, 2, 3, 4, 5), factor_range=(1, 2, 3, 4, 5),
                 iterations=50000, thin=10, burnin=1500, restarts=50, random_state=0,
                 standardize=False, n_jobs=1):
        self.cluster_range = cluster_range
        self.factor_range = factor_range
        self.iterations = iterations
        self.thin = thin
        self.burnin = burnin
        self.restarts = restarts
        self.random_state = random_state
        self.standardize = standardize
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        data = self._fit_prep(X)
        self.results_ = grid_search(data, self.cluster_range, self.factor_range,
                                    self._chain_config(), restarts=self.restarts,
                                    n_jobs=self.n_jobs, keep_chains=True)
        K, F = self.results_.best
        self.n_clusters_, self.n_factors_ = K, F
        self._set_chain(self.results_.chains[(K, F)], data, ModelDims(K, F))
        return self


class PCAKMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Kaiser-count PCA followed by gap-statistic k-means."""

    def __init__(self, max_clusters=5, n_refs=50, restarts=50, random_state=0):
        self.max_clusters = max_clusters
        self.n_refs = n_refs
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y=None):
        data = _dataset(X)
        self.n_features_in_ = data.R
        stream = RngStream(self.random_state)
        F, K, self.gap_ = pca_kmeans_pipeline(data, self.max_clusters, rng=stream.spawn(0),
                                              B_refs=self.n_refs, restarts=self.restarts,
                                              return_gap=True)
        self.n_factors_, self.n_clusters_ = F, K
        self.kaiser_count_ = kaiser_count(data)
        self.mean_ = data.Y.mean(0)
        self.scale_ = data.Y.std(0, ddof=1)
        Z = (data.Y - self.mean_) / self.scale_
        self.pca_ = PCA(n_components=F, svd_solver="full").fit(Z)
        scores = self.pca_.transform(Z)
        self.labels_, self.cluster_centers_ = kmeans_restarts(scores, K, self.restarts,
                                                              rng=stream.spawn(1))
        return self

    def transform(self, X):
        check_is_fitted(self, "pca_")
        X = check_array(X, dtype=float)
        return self.pca_.transform((X - self.mean_) / self.scale_)

    def predict(self, X):
        S = self.transform(X)
        d2 = ((S[:, None, :] - self.cluster_centers_[None]) ** 2).sum(-1)
        return d2.argmin(axis=1)
