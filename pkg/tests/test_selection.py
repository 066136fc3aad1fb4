import math

import numpy as np
import pytest
from scipy import stats

from bcfm.gibbs import ChainConfig, ChainOutput
from bcfm.kernels import RngStream
from bcfm.model import Dataset, ModelDims
from bcfm.selection import (
    GridResult,
    ICRecord,
    NoAcceptableModelError,
    PosteriorPointEstimate,
    _best,
    component_logdens,
    fit_model,
    grid_search,
    information_criterion,
    integrated_loglik,
    min_cluster_threshold,
    parameter_count,
)

from oracles import mc_integrated_loglik


def _estimate(rng, K=2, F=1, R=3):
    B = np.tril(rng.standard_normal((R, F)), -1)
    B[np.arange(F), np.arange(F)] = 1.0
    omega = np.stack([np.diag(rng.uniform(0.5, 1.5, F)) for _ in range(K)])
    return PosteriorPointEstimate(B=B, mu=rng.standard_normal((K, F)) * 2, omega=omega,
                                  sigma2=rng.uniform(0.3, 0.8, R), p=rng.dirichlet(np.ones(K) * 3))


def _fake_chain(est, map_labels):
    summ = {k: {"mean": getattr(est, k)} for k in ("B", "mu", "omega", "sigma2", "p")}
    summ["tau"] = {"mean": np.ones(est.B.shape[1])}
    return ChainOutput(draws={}, summaries=summ, assign_prob=None,
                       map_labels=np.asarray(map_labels))


# ---------------------------------------------------------------- parameter count


@pytest.mark.parametrize("K,F,R,d", [(4, 3, 20, 102.0), (2, 1, 2, 8.0), (5, 4, 13, 100.5)])
def test_parameter_count(K, F, R, d):
    # (5, 4, 13): 3 * 5 / 2 + 18 * 5 + 3 = 100.5, a non-integer count
    assert parameter_count(K, F, R) == d


def test_parameter_count_domain():
    with pytest.raises(ValueError):
        parameter_count(0, 1, 3)
    with pytest.raises(ValueError):
        parameter_count(2, 4, 3)


# ---------------------------------------------------------------- IC arithmetic


def test_ic_arithmetic(rng):
    # d=102, n=1000, loglik=-30000
    est = _estimate(rng, K=4, F=3, R=20)
    data = Dataset(rng.standard_normal((1000, 20)))
    ll = integrated_loglik(data, est)
    rec = information_criterion(_fake_chain(est, np.arange(1000) % 4), data, ModelDims(4, 3))
    assert rec.d == 102 and rec.loglik == pytest.approx(ll)
    assert rec.ic == pytest.approx(102 * math.log(1000) - 2 * ll, rel=1e-14)
    assert 102 * math.log(1000) + 60000 == pytest.approx(60704.591, abs=5e-4)


def test_small_cluster_rule(rng):
    est = _estimate(rng, K=2, F=1, R=3)
    data = Dataset(rng.standard_normal((1000, 3)))
    labels = np.zeros(1000, np.int64)
    labels[0] = 1
    rec = information_criterion(_fake_chain(est, labels), data, ModelDims(2, 1))
    assert rec.ic == math.inf and rec.min_cluster_size == 1 and not rec.finite
    assert rec.note == "small cluster" and math.isfinite(rec.loglik)
    labels[:5] = 1  # exactly at the threshold max(3, 5)
    assert information_criterion(_fake_chain(est, labels), data, ModelDims(2, 1)).finite
    labels[4] = 0
    assert not information_criterion(_fake_chain(est, labels), data, ModelDims(2, 1)).finite


def test_min_cluster_threshold():
    assert min_cluster_threshold(10) == 3
    assert min_cluster_threshold(600) == 3
    assert min_cluster_threshold(601) == 4
    assert min_cluster_threshold(1000) == 5


def test_small_cluster_rule_vacuous_for_one_cluster(rng):
    est = _estimate(rng, K=1, F=1, R=3)
    data = Dataset(rng.standard_normal((4, 3)))
    rec = information_criterion(_fake_chain(est, np.zeros(4, np.int64)), data, ModelDims(1, 1))
    assert rec.finite


def test_ic_monotonicity():
    def ic(d, ll, n=500):
        return ICRecord(1, 1, d, ll, d * math.log(n) - 2 * ll, n).ic

    assert ic(10, -100.0) > ic(10, -99.0)
    assert ic(10, -100.0) < ic(11, -100.0)


# ---------------------------------------------------------------- integrated likelihood


def test_loglik_single_component(rng):
    y = rng.standard_normal(7) * 2
    est = PosteriorPointEstimate(B=[[1.0]], mu=[[0.4]], omega=[[[1.3]]], sigma2=[0.6], p=[1.0])
    ref = stats.norm(0.4, math.sqrt(1.3 + 0.6)).logpdf(y).sum()
    assert integrated_loglik(y[:, None], est) == pytest.approx(ref, rel=1e-13)


def test_loglik_identical_components_ignore_weights(rng):
    est = _estimate(rng, K=3, F=2, R=5)
    est.mu[:] = est.mu[0]
    est.omega[:] = est.omega[0]
    Y = rng.standard_normal((20, 5))
    a = integrated_loglik(Y, est)
    est.p = np.array([0.8, 0.1, 0.1])
    assert integrated_loglik(Y, est) == pytest.approx(a, rel=1e-13)


def test_loglik_permutation_invariant(rng):
    est = _estimate(rng, K=3, F=2, R=5)
    Y = rng.standard_normal((20, 5))
    perm = [2, 0, 1]
    est2 = PosteriorPointEstimate(B=est.B, mu=est.mu[perm], omega=est.omega[perm],
                                  sigma2=est.sigma2, p=est.p[perm])
    assert integrated_loglik(Y, est2) == pytest.approx(integrated_loglik(Y, est), rel=1e-13)


def test_component_logdens_matches_scipy(rng):
    est = _estimate(rng, K=2, F=2, R=4)
    Y = rng.standard_normal((6, 4))
    comp = component_logdens(Y, est)
    for k in range(2):
        S = est.B @ est.omega[k] @ est.B.T + np.diag(est.sigma2)
        ref = np.log(est.p[k]) + stats.multivariate_normal(est.B @ est.mu[k], S).logpdf(Y)
        assert np.allclose(comp[:, k], ref, rtol=1e-12)


def test_loglik_monte_carlo_small(rng):
    est = _estimate(rng, K=2, F=1, R=3)
    Y = rng.standard_normal((5, 3)) + est.B @ est.mu[0]
    mc, se = mc_integrated_loglik(Y, est, 200000, np.random.default_rng(1))
    assert abs(integrated_loglik(Y, est) - mc) < 3 * se


def test_estimate_validation():
    with pytest.raises(ValueError):
        PosteriorPointEstimate(B=[[1.0]], mu=[[0.0]], omega=[[[1.0]]], sigma2=[1.0], p=[0.7])
    with pytest.raises(ValueError):
        PosteriorPointEstimate(B=[[1.0]], mu=[[0.0]], omega=[[[1.0]]], sigma2=[1.0, 2.0], p=[1.0])


# ---------------------------------------------------------------- grid search


CFG = ChainConfig(iterations=3000, thin=5, burnin_draws=100, seed=1)


@pytest.fixture(scope="module")
def outlier_data():
    """Two large groups plus a four-subject group: K=3 hits the small-cluster rule."""
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((1000, 5)) * 0.5
    Y[:500] += 4.0
    Y[-4:] = -12.0 + 0.3 * rng.standard_normal((4, 5))
    return Dataset(Y)


def test_grid_small_cluster_and_failures(outlier_data):
    res = grid_search(outlier_data, [1, 2, 3], [1, 2], CFG)
    assert len(res.records) == 6 and res.table().shape == (3, 2)
    assert res.best == (2, 1)
    r = res.record(3, 1)
    assert r.ic == math.inf and r.note == "small cluster" and r.min_cluster_size == 4
    failed = res.record(1, 2)
    assert failed.ic == math.inf and failed.note.startswith("failed:")
    with pytest.raises(KeyError):
        res.record(9, 9)


def test_grid_all_rejected(outlier_data):
    with pytest.raises(NoAcceptableModelError) as info:
        grid_search(outlier_data, [3], [1], CFG)
    assert len(info.value.records) == 1


def test_grid_singleton_equals_direct_fit(outlier_data):
    res = grid_search(outlier_data, [2], [1], CFG)
    chain, _, _ = fit_model(outlier_data, ModelDims(2, 1), CFG, RngStream(CFG.seed).spawn(2, 1))
    direct = information_criterion(chain, outlier_data, ModelDims(2, 1))
    assert res.record(2, 1) == direct


def test_grid_null_model():
    data = Dataset(np.random.default_rng(5).standard_normal((200, 4)))
    res = grid_search(data, [1, 2], [1, 2], CFG)
    assert res.best[0] == 1


def test_grid_parallel_matches_serial(outlier_data):
    a = grid_search(outlier_data, [1, 2], [1], CFG, n_jobs=1)
    b = grid_search(outlier_data, [2, 1], [1], CFG, n_jobs=2)
    for K in (1, 2):
        assert a.record(K, 1) == b.record(K, 1)


def test_grid_keep_chains(outlier_data):
    res = grid_search(outlier_data, [2], [1], CFG, keep_chains=True)
    assert set(res.chains) == {(2, 1)}
    assert res.chains[(2, 1)].log_joint is not None
    assert grid_search(outlier_data, [2], [1], CFG).chains == {}


def test_best_tie_breaking():
    recs = [ICRecord(3, 2, 1, 0, 5.0, 9), ICRecord(2, 3, 1, 0, 5.0, 9), ICRecord(2, 2, 1, 0, 5.0, 9),
            ICRecord(1, 1, 1, 0, math.inf, 9)]
    assert _best(recs) == (2, 2)
    with pytest.raises(ValueError):
        grid_search(Dataset(np.ones((5, 2)) + np.eye(5, 2)), [], [1], CFG)


def test_grid_result_table():
    recs = [ICRecord(1, 1, 1, 0, 3.0, 9), ICRecord(2, 1, 1, 0, math.inf, 9)]
    t = GridResult(recs, (1, 1)).table()
    assert t.shape == (2, 1) and t[1, 0] == math.inf
