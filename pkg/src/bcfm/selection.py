"""Information criterion and (K, F) grid search.

The criterion is ``IC = d ln(n) - 2 ln p(Y | K, F, theta_hat)`` where the
likelihood integrates out the latent factors and labels and ``theta_hat``
holds posterior means.  A model whose smallest cluster (by modal assignment)
is too small is rejected with ``IC = inf``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .gibbs import ChainConfig, ChainOutput, SamplerError, run_chain
from .kernels import LOG_2PI, RngStream, cholesky
from .model import Dataset, ElicitationError, ModelDims, elicit, initial_state

__all__ = [
    "PosteriorPointEstimate",
    "ICRecord",
    "GridResult",
    "parameter_count",
    "component_logdens",
    "integrated_loglik",
    "min_cluster_threshold",
    "information_criterion",
    "fit_model",
    "grid_search",
    "NoAcceptableModelError",
]

logger = logging.getLogger(__name__)


def parameter_count(K: int, F: int, R: int) -> float:
    """``d = (K - 2)(F + 1)/2 + (R + K)(F + 1) + F - 1``, evaluated as printed.

    The value is not always an integer (e.g. ``K=5, F=4``); it is kept as a
    float so IC comparisons use the formula exactly.
    """
    if K < 1 or F < 1 or R < F:
        raise ValueError(f"need K >= 1, F >= 1 and R >= F, got K={K}, F={F}, R={R}")
    return (K - 2) * (F + 1) / 2 + (R + K) * (F + 1) + F - 1.0


@dataclass
class PosteriorPointEstimate:
    """Posterior means used to evaluate the integrated likelihood."""

    B: np.ndarray  # (R, F)
    mu: np.ndarray  # (K, F)
    omega: np.ndarray  # (K, F, F)
    sigma2: np.ndarray  # (R,)
    p: np.ndarray  # (K,)
    tau: Optional[np.ndarray] = None

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.omega = np.asarray(self.omega, dtype=float).reshape(self.mu.shape + (self.mu.shape[1],))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        R, F = self.B.shape
        K = self.mu.shape[0]
        if self.sigma2.shape != (R,) or self.p.shape != (K,) or self.mu.shape[1] != F:
            raise ValueError("inconsistent estimate dimensions")
        if np.any(self.p < 0) or abs(self.p.sum() - 1.0) > 1e-9:
            raise ValueError("p is not a probability vector")

    @classmethod
    def from_chain(cls, chain: ChainOutput) -> "PosteriorPointEstimate":
        s = chain.summaries
        p = s["p"]["mean"]
        return cls(
            B=s["B"]["mean"],
            mu=s["mu"]["mean"],
            omega=s["omega"]["mean"],
            sigma2=s["sigma2"]["mean"],
            p=p / p.sum(),
            tau=s["tau"]["mean"],
        )

    @property
    def K(self):
        return self.mu.shape[0]


def component_logdens(data, estimate: PosteriorPointEstimate) -> np.ndarray:
    """``(n, K)`` matrix of ``log p_k + log N(y_i; B mu_k, B Omega_k B' + V)``.

    One Cholesky factorization per cluster, reused across subjects.
    """
    Y = data.Y if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    n, R = Y.shape
    B, V = estimate.B, estimate.sigma2
    if B.shape[0] != R:
        raise ValueError(f"estimate has {B.shape[0]} variables, data has {R}")
    K = estimate.K
    comp = np.empty((n, K))
    with np.errstate(divide="ignore"):
        logp = np.log(estimate.p)
    for k in range(K):
        Sig = B @ estimate.omega[k] @ B.T + np.diag(V)
        L = cholesky(Sig, f"marginal covariance of cluster {k}")
        W = solve_triangular(L, (Y - B @ estimate.mu[k]).T, lower=True)
        comp[:, k] = (
            logp[k] - 0.5 * (W * W).sum(0) - np.log(np.diag(L)).sum() - 0.5 * R * LOG_2PI
        )
    return comp


def integrated_loglik(data, estimate: PosteriorPointEstimate) -> float:
    """``sum_i log sum_k p_k N(y_i; B mu_k, B Omega_k B' + V)``.

    The latent factors and labels are integrated out analytically; the
    mixture sum uses log-sum-exp.
    """
    return float(logsumexp(component_logdens(data, estimate), axis=1).sum())


def min_cluster_threshold(n: int) -> int:
    """Smallest acceptable modal cluster size, ``max(3, ceil(0.005 n))``."""
    return max(3, math.ceil(0.005 * n))


@dataclass
class ICRecord:
    K: int
    F: int
    d: float
    loglik: float
    ic: float
    min_cluster_size: int
    note: str = ""

    @property
    def finite(self):
        return math.isfinite(self.ic)


def information_criterion(chain: ChainOutput, data: Dataset, dims: ModelDims) -> ICRecord:
    """Score a fitted chain; ``ic`` is ``inf`` when the small-cluster rule fires."""
    n, R = data.n, data.R
    d = parameter_count(dims.K, dims.F, R)
    est = PosteriorPointEstimate.from_chain(chain)
    ll = integrated_loglik(data, est)
    size = int(np.bincount(chain.map_labels, minlength=dims.K).min())
    if size < min_cluster_threshold(n):
        return ICRecord(dims.K, dims.F, d, ll, math.inf, size, "small cluster")
    return ICRecord(dims.K, dims.F, d, ll, d * math.log(n) - 2.0 * ll, size)


def fit_model(data: Dataset, dims: ModelDims, config: ChainConfig, stream: RngStream = None,
              restarts: int = 50):
    """Elicit priors, initialize and run one chain.

    ``stream`` defaults to ``RngStream(config.seed)``; elicitation (k-means
    restarts) uses its substream 0 and the chain its substream 1.
    Returns ``(chain, prior, artifacts)``.
    """
    stream = RngStream(config.seed) if stream is None else stream
    prior, art = elicit(data, dims, rng=stream.spawn(0), restarts=restarts)
    init = initial_state(prior, art)
    chain = run_chain(data, dims, prior, init, config, rng=stream.spawn(1))
    return chain, prior, art


@dataclass
class GridResult:
    records: list
    best: tuple
    chains: dict = field(default_factory=dict, repr=False)

    def table(self):
        """IC values as a ``(len(K_range), len(F_range))`` array."""
        Ks = sorted({r.K for r in self.records})
        Fs = sorted({r.F for r in self.records})
        out = np.full((len(Ks), len(Fs)), np.nan)
        for r in self.records:
            out[Ks.index(r.K), Fs.index(r.F)] = r.ic
        return out

    def record(self, K, F) -> ICRecord:
        for r in self.records:
            if (r.K, r.F) == (K, F):
                return r
        raise KeyError((K, F))


def _score_one(data, K, F, config, restarts, keep_chain, base):
    dims = ModelDims(K, F)
    stream = base.spawn(K, F)
    d = parameter_count(K, F, data.R)
    try:
        chain, _, _ = fit_model(data, dims, config, stream, restarts)
        rec = information_criterion(chain, data, dims)
    except (ElicitationError, SamplerError, np.linalg.LinAlgError) as exc:
        logger.warning("model K=%d F=%d rejected: %s", K, F, exc)
        return ICRecord(K, F, d, math.nan, math.inf, 0, f"failed: {exc}"), None
    return rec, (chain if keep_chain else None)


class NoAcceptableModelError(RuntimeError):
    """Every model in a grid was rejected; ``records`` holds the scored grid."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records


def _best(records):
    finite = [r for r in records if r.finite]
    if not finite:
        raise NoAcceptableModelError(
            "every model in the grid has IC = inf; widen the K/F ranges or supply more data",
            records,
        )
    r = min(finite, key=lambda r: (r.ic, r.K, r.F))
    return (r.K, r.F)


def grid_search(data: Dataset, K_range: Sequence[int], F_range: Sequence[int],
                config: ChainConfig, restarts: int = 50, n_jobs: int = 1,
                keep_chains: bool = False, stream: RngStream = None) -> GridResult:
    """Fit and score every ``(K, F)`` pair.

    Each model draws from its own substream ``stream.spawn(K, F)``, where
    ``stream`` defaults to ``RngStream(config.seed)``, so the table does not
    depend on ``n_jobs`` or the order of evaluation.
    Models that fail elicitation or sampling are kept with ``ic = inf``.
    The best model is the smallest finite IC, ties going to smaller K, then
    smaller F.
    """
    K_range, F_range = list(K_range), list(F_range)
    if not K_range or not F_range:
        raise ValueError("K_range and F_range must be non-empty")
    for F in F_range:
        ModelDims(1, F).validate(data)
    if keep_chains is False and config.track_log_joint:
        config = replace(config, track_log_joint=False)
    base = RngStream(config.seed) if stream is None else stream
    pairs = [(K, F) for K in K_range for F in F_range]
    if n_jobs == 1:
        out = [_score_one(data, K, F, config, restarts, keep_chains, base) for K, F in pairs]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=n_jobs)(
            delayed(_score_one)(data, K, F, config, restarts, keep_chains, base) for K, F in pairs
        )
    records = [r for r, _ in out]
    chains = {(r.K, r.F): c for r, c in out if c is not None}
    return GridResult(records, _best(records), chains)
