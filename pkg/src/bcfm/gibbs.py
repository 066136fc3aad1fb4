"""Gibbs sampler for the Bayesian clustering factor model.

One sweep updates, in order: factors ``X``, cluster means ``mu``, cluster
covariances ``omega``, loadings ``B``, idiosyncratic variances ``sigma2``,
loading variances ``tau``, labels ``z`` and weights ``p``.

Each block has a ``*_conditional`` function returning the parameters of its
full conditional distribution and an ``update_*`` function drawing from it.
The split lets tests check every conditional against :func:`log_joint`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _core
from .kernels import (
    LOG_2PI,
    NotPositiveDefiniteError,
    RngStream,
    as_generator,
    cholesky,
    dirichlet_logpdf,
    inverse_gamma_logpdf,
    inverse_wishart_logpdf,
    sample_categorical_rows,
    sample_dirichlet,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvn_precision,
)
from .model import Dataset, ModelDims, PriorSpec, State

__all__ = [
    "SamplerError",
    "ChainConfig",
    "ChainOutput",
    "factors_conditional",
    "means_conditional",
    "covariances_conditional",
    "loadings_conditional",
    "noise_conditional",
    "tau_conditional",
    "assignment_logweights",
    "weights_conditional",
    "update_factors",
    "update_cluster_means",
    "update_cluster_covariances",
    "update_loadings",
    "update_idiosyncratic_variances",
    "update_tau",
    "update_assignments",
    "update_weights",
    "log_joint",
    "run_chain",
    "summarize_chain",
    "label_agreement",
]

logger = logging.getLogger(__name__)

PARAMS = ("B", "tau", "sigma2", "mu", "omega", "p")


class SamplerError(RuntimeError):
    """A block update failed; carries the last valid state as ``checkpoint``."""

    def __init__(self, message, iteration=None, block=None, checkpoint=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block
        self.checkpoint = checkpoint


def _Y(data):
    return data.Y if isinstance(data, Dataset) else np.ascontiguousarray(data, dtype=float)


def _fail(what, k, piv):
    return NotPositiveDefiniteError(
        f"{what}[{k}] is not positive definite (Cholesky pivot {piv} is not positive)", pivot=piv
    )


def _prior_arrays(prior: PriorSpec):
    Cinv = np.linalg.inv(prior.C)
    Cinv = 0.5 * (Cinv + np.swapaxes(Cinv, -1, -2))
    Cinv_m = np.einsum("kij,kj->ki", Cinv, prior.m)
    return (
        np.ascontiguousarray(Cinv),
        np.ascontiguousarray(Cinv_m),
        float(prior.nu),
        np.ascontiguousarray(prior.Psi, dtype=float),
        np.ascontiguousarray(prior.alpha, dtype=float),
        np.ascontiguousarray(prior.n_omega, dtype=float),
        np.ascontiguousarray(prior.s2_omega, dtype=float),
        float(prior.n_sigma),
        float(prior.s2_sigma),
        float(prior.n_tau),
        float(prior.s2_tau),
    )


# ---------------------------------------------------------------------------
# full conditionals


def factors_conditional(state: State, data):
    """Per-cluster precision ``(K, F, F)`` and per-subject linear term ``(n, F)``.

    ``x_i | rest ~ N(P_k^-1 h_i, P_k^-1)`` with ``P_k = omega_k^-1 + B' V^-1 B``
    and ``h_i = B' V^-1 y_i + omega_k^-1 mu_k`` for ``k = z_i``.
    """
    P, h, k, piv = _core.factor_conditional(_Y(data), state.B, state.sigma2, state.mu, state.omega, state.z)
    if piv >= 0:
        raise _fail("omega", k, piv)
    return P, h


def means_conditional(state: State, prior: PriorSpec):
    """Precision ``C_k^-1 + n_k omega_k^-1`` and linear term
    ``C_k^-1 m_k + omega_k^-1 sum_{z_i = k} x_i`` for each ``mu_k``."""
    Cinv, Cinv_m = _prior_arrays(prior)[:2]
    P, h, k, piv = _core.means_conditional(state.X, state.z, state.omega, Cinv, Cinv_m)
    if piv >= 0:
        raise _fail("omega", k, piv)
    return P, h


def covariances_conditional(state: State, prior: PriorSpec):
    """Parameters of the covariance conditionals.

    Returns ``(shape, scale, df, iw_scale)``: inverse gamma parameters for the
    ``F`` diagonal entries of ``omega[0]`` and inverse Wishart parameters for
    ``omega[1:]``.
    """
    a = _prior_arrays(prior)
    return _core.covariances_conditional(state.X, state.z, state.mu, a[5], a[6], a[2], a[3])


def loadings_conditional(state: State, data):
    """Gaussian conditionals of the free loadings, row by row.

    Returns a list of ``(r, P, h)`` with ``r`` the 0-based row and ``P``/``h``
    the precision and linear term of that row's free entries: ``min(r, F)`` of
    them.  Row 0 is fixed and absent.
    """
    P, h = _core.loadings_conditional(_Y(data), state.X, state.sigma2, state.tau)
    F = state.F
    return [(r, P[r, : min(r, F), : min(r, F)], h[r, : min(r, F)]) for r in range(1, P.shape[0])]


def noise_conditional(state: State, data, prior: PriorSpec):
    """Inverse gamma ``(shape, scale)`` for each ``sigma2_r``."""
    return _core.noise_conditional(_Y(data), state.X, state.B, float(prior.n_sigma), float(prior.s2_sigma))


def tau_conditional(state: State, prior: PriorSpec):
    """Inverse gamma ``(shape, scale)`` for each ``tau_l``; only entries below
    the constrained top block of column ``l`` enter."""
    return _core.tau_conditional(state.B, float(prior.n_tau), float(prior.s2_tau))


def assignment_logweights(state: State):
    """Unnormalized ``(n, K)`` log-probabilities of the label conditional."""
    logw, k, piv = _core.assignment_logweights(state.X, state.mu, state.omega, state.p)
    if piv >= 0:
        raise _fail("omega", k, piv)
    return logw


def weights_conditional(state: State, prior: PriorSpec):
    """Dirichlet parameters ``n_k + alpha_k``."""
    return np.bincount(state.z, minlength=state.K) + prior.alpha


# ---------------------------------------------------------------------------
# updates; each consumes random numbers exactly as the compiled sweep does


def update_factors(state: State, data, prior: PriorSpec, rng):
    P, h = factors_conditional(state, data)
    X = np.empty_like(h)
    k, piv = _core.factor_draw(as_generator(rng), P, h, state.z, X)
    if piv >= 0:
        raise _fail("factor precision", k, piv)
    return X


def update_cluster_means(state: State, prior: PriorSpec, rng):
    P, h = means_conditional(state, prior)
    return sample_mvn_precision(P, h, rng)


def update_cluster_covariances(state: State, prior: PriorSpec, rng):
    shape, scale, df, iw_scale = covariances_conditional(state, prior)
    gen = as_generator(rng)
    omega = np.empty_like(state.omega)
    omega[0] = np.diag(sample_inverse_gamma(shape, scale, gen))
    if state.K > 1:
        omega[1:] = sample_inverse_wishart(df, iw_scale, gen)
    return omega


def update_loadings(state: State, data, rng):
    P, h = _core.loadings_conditional(_Y(data), state.X, state.sigma2, state.tau)
    B = state.B.copy()
    r, piv = _core.loadings_draw(as_generator(rng), P, h, B)
    if piv >= 0:
        raise _fail("loading precision", r, piv)
    return B


def update_idiosyncratic_variances(state: State, data, prior: PriorSpec, rng):
    shape, scale = noise_conditional(state, data, prior)
    return sample_inverse_gamma(shape, scale, rng)


def update_tau(state: State, prior: PriorSpec, rng):
    shape, scale = tau_conditional(state, prior)
    return np.atleast_1d(sample_inverse_gamma(shape, scale, rng))


def update_assignments(state: State, rng):
    return sample_categorical_rows(assignment_logweights(state), rng)


def update_weights(state: State, prior: PriorSpec, rng):
    return sample_dirichlet(weights_conditional(state, prior), rng)


# ---------------------------------------------------------------------------
# joint density


def log_joint(state: State, data, prior: PriorSpec) -> float:
    """Log of the joint density of data, latent variables and parameters.

    Includes every normalizing constant, so differences between states are
    exact log posterior ratios.
    """
    Y = _Y(data)
    n, R = Y.shape
    K, F = state.K, state.F
    B, s2 = state.B, state.sigma2
    if state.z.min() < 0 or state.z.max() >= K:
        raise ValueError("cluster label out of range")

    resid = Y - state.X @ B.T
    ss = np.einsum("ij,ij->j", resid, resid)
    out = -0.5 * (n * R * LOG_2PI + n * np.log(s2).sum() + (ss / s2).sum())

    # factors given labels
    L = cholesky(state.omega, "omega")
    Linv = np.linalg.inv(L)
    D = state.X - state.mu[state.z]
    W = np.einsum("nij,nj->ni", Linv[state.z], D)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(1)
    out += -0.5 * (n * F * LOG_2PI + logdet[state.z].sum() + (W * W).sum())

    # labels given weights
    out += np.log(state.p)[state.z].sum()

    # loadings prior: entry (r, l) below the top block is N(0, tau_l)
    below = np.tril(np.ones((R, F), dtype=bool), k=-1)
    tau = np.broadcast_to(state.tau, (R, F))
    out += -0.5 * (LOG_2PI * below.sum() + np.log(tau[below]).sum() + (B[below] ** 2 / tau[below]).sum())

    out += inverse_gamma_logpdf(state.tau, 0.5 * prior.n_tau, 0.5 * prior.n_tau * prior.s2_tau).sum()
    out += inverse_gamma_logpdf(s2, 0.5 * prior.n_sigma, 0.5 * prior.n_sigma * prior.s2_sigma).sum()

    LC = cholesky(prior.C, "C")
    Wm = np.einsum("kij,kj->ki", np.linalg.inv(LC), state.mu - prior.m)
    out += -0.5 * (K * F * LOG_2PI + (Wm * Wm).sum()) - np.log(np.diagonal(LC, axis1=1, axis2=2)).sum()

    out += inverse_gamma_logpdf(
        np.diag(state.omega[0]), 0.5 * prior.n_omega, 0.5 * prior.n_omega * prior.s2_omega
    ).sum()
    for k in range(1, K):
        out += inverse_wishart_logpdf(state.omega[k], prior.nu, prior.Psi[k])

    out += dirichlet_logpdf(state.p, prior.alpha)
    return float(out)


# ---------------------------------------------------------------------------
# chain


@dataclass
class ChainConfig:
    """Run length settings.

    ``burnin_draws`` counts retained (thinned) draws, so the retained sample
    size is ``iterations // thin - burnin_draws``.
    """

    iterations: int = 50000
    thin: int = 10
    burnin_draws: int = 1500
    seed: int = 0
    track_log_joint: bool = True
    store_factors: bool = False

    def __post_init__(self):
        if min(self.iterations, self.thin) <= 0 or self.burnin_draws < 0:
            raise ValueError("iterations and thin must be positive, burnin_draws non-negative")
        if self.iterations // self.thin <= self.burnin_draws:
            raise ValueError(
                f"iterations/thin = {self.iterations // self.thin} must exceed "
                f"burnin_draws = {self.burnin_draws}"
            )

    @property
    def n_draws(self):
        return self.iterations // self.thin - self.burnin_draws


@dataclass
class ChainOutput:
    """Retained draws and their summaries.

    ``draws`` maps parameter names to arrays with the draw index first
    (``B``, ``tau``, ``sigma2``, ``mu``, ``omega``, ``p``, ``z`` and, when
    stored, ``X``).  ``summaries`` maps the same names (except ``z``/``X``)
    to dicts with ``mean``, ``q025`` and ``q975``.
    """

    draws: dict
    summaries: dict
    assign_prob: np.ndarray
    map_labels: np.ndarray
    log_joint: Optional[np.ndarray] = None
    last_state: Optional[State] = None
    config: Optional[ChainConfig] = None

    @property
    def n_draws(self):
        return self.draws["p"].shape[0]

    def state_at(self, d: int) -> State:
        """Reconstruct retained draw ``d`` (factors only if stored)."""
        X = self.draws["X"][d] if "X" in self.draws else None
        return State(**{k: self.draws[k][d] for k in PARAMS}, z=self.draws["z"][d].astype(np.intp), X=X)


_BLOCKS = ("factors", "means", "covariances", "loadings", "noise", "tau", "assignments", "weights")
_WHAT = ("factor precision", "mean precision", "covariance scale", "loading precision",
         "", "", "omega", "")


def _arrays(state: State):
    for k in ("B", "tau", "sigma2", "mu", "omega", "p", "X"):
        setattr(state, k, np.ascontiguousarray(getattr(state, k), dtype=float))
    state.z = np.ascontiguousarray(state.z, dtype=np.int64)
    return state


def gibbs_sweep(state: State, data, prior: PriorSpec, rng, n_iter=1, _pa=None) -> State:
    """Run ``n_iter`` sweeps, updating ``state`` in place.

    Equivalent to calling the eight ``update_*`` functions in order with the
    same generator.  Raises :class:`SamplerError` on a numerical failure,
    leaving ``state`` at the last completed block.
    """
    _arrays(state)
    pa = _prior_arrays(prior) if _pa is None else _pa
    done, blk, k, piv = _core.run_sweeps(
        as_generator(rng), int(n_iter), _Y(data), state.B, state.tau, state.sigma2, state.mu,
        state.omega, state.p, state.z, state.X, *pa,
    )
    if blk >= 0:
        if piv == -2:
            detail = f"subject {k} has zero probability under every cluster"
        else:
            detail = (f"{_WHAT[blk]}[{k}] is not positive definite "
                      f"(Cholesky pivot {piv} is not positive)")
        raise SamplerError(
            f"sweep {done + 1}, block {_BLOCKS[blk]}: {detail}",
            iteration=done + 1,
            block=_BLOCKS[blk],
            checkpoint=state.copy(),
        )
    return state


def run_chain(data, dims: ModelDims, prior: PriorSpec, init: State, config: ChainConfig,
              rng=None) -> ChainOutput:
    """Run the sampler from ``init`` and summarize the retained draws.

    The random stream defaults to ``RngStream(config.seed)``.  On a numerical
    failure a :class:`SamplerError` is raised naming the iteration and block,
    with the last valid state attached as ``checkpoint``.
    """
    Y = _Y(data)
    n, R = Y.shape
    K, F = dims.K, dims.F
    if init.B.shape != (R, F) or init.mu.shape != (K, F) or init.X.shape != (n, F):
        raise ValueError("initial state does not match the data and model dimensions")
    if prior.K != K or prior.F != F:
        raise ValueError("prior does not match the model dimensions")
    init.check()
    gen = as_generator(RngStream(config.seed) if rng is None else rng)
    pa = _prior_arrays(prior)

    D = config.n_draws
    zdtype = np.int8 if K < 128 else np.int32
    draws = {
        "B": np.empty((D, R, F)),
        "tau": np.empty((D, F)),
        "sigma2": np.empty((D, R)),
        "mu": np.empty((D, K, F)),
        "omega": np.empty((D, K, F, F)),
        "p": np.empty((D, K)),
        "z": np.empty((D, n), dtype=zdtype),
    }
    if config.store_factors:
        draws["X"] = np.empty((D, n, F))
    lj = np.empty(D) if config.track_log_joint else None

    state = _arrays(init.copy())
    it = 0
    for d in range(-config.burnin_draws, D):
        try:
            gibbs_sweep(state, Y, prior, gen, n_iter=config.thin, _pa=pa)
        except SamplerError as exc:
            exc.iteration += it
            exc.args = (f"iteration {exc.iteration}, block {exc.block}: " + str(exc).split(": ", 1)[1],)
            raise
        it += config.thin
        if d < 0:
            continue
        for k in PARAMS:
            draws[k][d] = getattr(state, k)
        draws["z"][d] = state.z
        if config.store_factors:
            draws["X"][d] = state.X
        if lj is not None:
            lj[d] = log_joint(state, Y, prior)
    summaries, assign_prob, map_labels = summarize_chain(draws, K)
    return ChainOutput(draws, summaries, assign_prob, map_labels, lj, state, config)


def summarize_chain(draws: dict, K: Optional[int] = None):
    """Posterior means, equal-tailed 95% intervals and label frequencies.

    Quantiles use linear interpolation between order statistics (numpy's
    default, Hyndman-Fan type 7).  ``assign_prob[i, k]`` is the fraction of
    draws with ``z_i == k``; ``map_labels`` is its row-wise argmax with ties
    going to the lowest label.
    """
    z = np.asarray(draws["z"])
    if z.shape[0] < 2:
        raise ValueError("need at least 2 retained draws")
    summaries = {}
    for k in PARAMS:
        if k not in draws:
            continue
        a = np.asarray(draws[k])
        q = np.quantile(a, [0.025, 0.975], axis=0)
        summaries[k] = {"mean": a.mean(axis=0), "q025": q[0], "q975": q[1]}
    if K is None:
        K = int(np.asarray(draws["p"]).shape[1]) if "p" in draws else int(z.max()) + 1
    T, n = z.shape
    counts = np.zeros((n, K), dtype=np.int64)
    for k in range(K):
        counts[:, k] = (z == k).sum(axis=0)
    assign_prob = _normalize_rows(counts)
    map_labels = counts.argmax(axis=1)
    return summaries, assign_prob, map_labels


def label_agreement(chain: ChainOutput) -> np.ndarray:
    """Per-draw fraction of subjects whose label equals their modal label.

    No relabeling is applied to the draws; a label switch during the run
    shows up as a sustained drop in this series.
    """
    return (np.asarray(chain.draws["z"]) == chain.map_labels[None, :]).mean(axis=1)


def _normalize_rows(counts):
    """``counts / row totals`` with rows forced to sum to exactly 1.0.

    A row whose floating-point sum misses 1.0 has one nonzero entry nudged an
    ulp at a time towards the target.  Rounding inside the sum can make the
    walk step over 1.0; the next entry (by decreasing size) is then tried.
    """
    P = counts / counts.sum(axis=1, keepdims=True)
    for i in np.flatnonzero(P.sum(axis=1) != 1.0):
        orig = P[i].copy()
        for j in np.argsort(-orig, kind="stable"):
            if orig[j] == 0.0:
                break
            row = orig.copy()
            s = row.sum()
            side = s > 1.0
            for _ in range(256):
                row[j] = np.nextafter(row[j], -np.inf if side else np.inf)
                s = row.sum()
                if s == 1.0 or (s > 1.0) != side:
                    break
            if s == 1.0:
                P[i] = row
                break
        else:
            raise FloatingPointError(f"could not normalize row {i} of the label frequencies")
        if P[i].sum() != 1.0:
            raise FloatingPointError(f"could not normalize row {i} of the label frequencies")
    return P
