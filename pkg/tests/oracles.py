"""Independent reference computations shared by the unit and acceptance tests.

The full-conditional log-densities here use scipy's distributions applied to
the parameters returned by the ``*_conditional`` functions, so the ratio check
compares two independent code paths: the closed-form conditional and the
joint density.
"""
from dataclasses import replace

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from bcfm import gibbs


def _mvn_prec_logpdf(x, P, h):
    cov = np.linalg.inv(P)
    return stats.multivariate_normal(cov @ h, cov).logpdf(x)


def fc_logpdf(block, state, Y, prior, value):
    """Log full-conditional density of ``value`` for one block, given ``state``."""
    if block == "X":
        P, h = gibbs.factors_conditional(state, Y)
        return sum(_mvn_prec_logpdf(value[i], P[state.z[i]], h[i]) for i in range(len(value)))
    if block == "mu":
        P, h = gibbs.means_conditional(state, prior)
        return sum(_mvn_prec_logpdf(value[k], P[k], h[k]) for k in range(len(value)))
    if block == "omega":
        shape, scale, df, S = gibbs.covariances_conditional(state, prior)
        out = stats.invgamma(shape, scale=scale).logpdf(np.diag(value[0])).sum()
        for k in range(1, state.K):
            out += stats.invwishart(df[k - 1], S[k - 1]).logpdf(value[k])
        return out
    if block == "B":
        out = 0.0
        for r, P, h in gibbs.loadings_conditional(state, Y):
            out += _mvn_prec_logpdf(value[r, : len(h)], P, h)
        return out
    if block == "sigma2":
        shape, scale = gibbs.noise_conditional(state, Y, prior)
        return stats.invgamma(shape, scale=scale).logpdf(value).sum()
    if block == "tau":
        shape, scale = gibbs.tau_conditional(state, prior)
        return stats.invgamma(shape, scale=scale).logpdf(value).sum()
    if block == "z":
        lw = gibbs.assignment_logweights(state)
        lw = lw - logsumexp(lw, axis=1, keepdims=True)
        return lw[np.arange(len(value)), value].sum()
    if block == "p":
        return stats.dirichlet(gibbs.weights_conditional(state, prior)).logpdf(value)
    raise KeyError(block)


def draw_block(block, state, Y, prior, rng):
    """One draw of ``block`` from its full conditional."""
    if block == "X":
        return gibbs.update_factors(state, Y, prior, rng)
    if block == "mu":
        return gibbs.update_cluster_means(state, prior, rng)
    if block == "omega":
        return gibbs.update_cluster_covariances(state, prior, rng)
    if block == "B":
        return gibbs.update_loadings(state, Y, rng)
    if block == "sigma2":
        return gibbs.update_idiosyncratic_variances(state, Y, prior, rng)
    if block == "tau":
        return gibbs.update_tau(state, prior, rng)
    if block == "z":
        return gibbs.update_assignments(state, rng)
    if block == "p":
        return gibbs.update_weights(state, prior, rng)
    raise KeyError(block)


BLOCKS = ("X", "mu", "omega", "B", "sigma2", "tau", "z", "p")


def ratio_discrepancy(block, Y, state, prior, rng):
    """Draw two values of ``block`` and return ``(|dfc - djoint|, |djoint|)``."""
    a = draw_block(block, state, Y, prior, rng)
    b = draw_block(block, state, Y, prior, rng)
    d_fc = fc_logpdf(block, state, Y, prior, a) - fc_logpdf(block, state, Y, prior, b)
    d_joint = (gibbs.log_joint(replace(state, **{block: a}), Y, prior)
               - gibbs.log_joint(replace(state, **{block: b}), Y, prior))
    return abs(d_fc - d_joint), abs(d_joint)


def ratio_suite(n_instances=200, seed=0, blocks=BLOCKS, **dims):
    """Worst relative ratio discrepancy per block over random instances."""
    from conftest import random_instance

    rng = np.random.default_rng(seed)
    worst = {b: 0.0 for b in blocks}
    for _ in range(n_instances):
        Y, state, prior = random_instance(rng, **dims)
        for b in blocks:
            err, scale = ratio_discrepancy(b, Y, state, prior, rng)
            worst[b] = max(worst[b], err / max(1.0, scale))
    return worst


def mc_integrated_loglik(Y, est, n_draws, rng, chunk=1_000_000):
    """Monte Carlo estimate of the integrated log-likelihood and its standard error.

    Draws ``(z, x)`` from the mixture, averages ``N(y_i; B x, V)`` for every
    subject, and propagates the sampling error of the ``n`` correlated averages
    through ``sum_i log`` with the delta method.
    """
    Y = np.atleast_2d(Y)
    n, R = Y.shape
    K, F = est.mu.shape
    L = np.linalg.cholesky(est.omega)
    sd = np.sqrt(est.sigma2)
    s1 = np.zeros(n)  # sums of weights
    s2 = np.zeros((n, n))  # sums of weight cross-products
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        z = rng.choice(K, size=m, p=est.p)
        x = est.mu[z] + np.einsum("mij,mj->mi", L[z], rng.standard_normal((m, F)))
        mean = x @ est.B.T
        w = np.empty((m, n))
        for i in range(n):
            w[:, i] = np.exp(stats.norm.logpdf(Y[i], mean, sd).sum(1))
        s1 += w.sum(0)
        s2 += w.T @ w
        done += m
    p_hat = s1 / n_draws
    cov = (s2 / n_draws - np.outer(p_hat, p_hat)) / n_draws
    g = 1.0 / p_hat
    return float(np.log(p_hat).sum()), float(np.sqrt(g @ cov @ g))
