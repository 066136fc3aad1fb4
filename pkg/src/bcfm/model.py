"""Model containers and empirical-Bayes prior elicitation.

Cluster labels are 0-based throughout the library (cluster ``0`` is the one
whose factor covariance is constrained to be diagonal); the CLI writes them
1-based.

Elicitation pipeline::

    preliminary_factor_analysis -> rotate_to_constraint -> estimate_factors
        -> kmeans_restarts -> elicit_priors

:func:`elicit` runs the whole chain and also returns the initial sampler
state built from the artifacts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import _core
from .kernels import as_generator, cholesky, ldl_decompose, LdlFactors

__all__ = [
    "ElicitationError",
    "Dataset",
    "ModelDims",
    "State",
    "PriorSpec",
    "ElicitationArtifacts",
    "preliminary_factor_analysis",
    "rotate_to_constraint",
    "estimate_factors",
    "kmeans_restarts",
    "kmeans_objective",
    "elicit_priors",
    "elicit",
    "initial_state",
    "check_loadings_constraint",
]


class ElicitationError(ValueError):
    """The data cannot support the requested (K, F) prior construction."""


@dataclass
class Dataset:
    """An ``n x R`` matrix of complete observations with variable names."""

    Y: np.ndarray
    variable_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise ValueError(f"Y must be 2-dimensional, got shape {Y.shape}")
        if Y.shape[0] < 2 or Y.shape[1] < 2:
            raise ValueError(f"need at least 2 subjects and 2 variables, got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            bad = np.argwhere(~np.isfinite(Y))[0]
            raise ValueError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        self.Y = Y
        if self.variable_names is None:
            self.variable_names = [f"y{r + 1}" for r in range(Y.shape[1])]
        self.variable_names = [str(v) for v in self.variable_names]
        if len(self.variable_names) != Y.shape[1]:
            raise ValueError("variable_names length does not match the number of columns")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def R(self) -> int:
        return self.Y.shape[1]

    def standardized(self) -> "Dataset":
        Y = self.Y
        return Dataset((Y - Y.mean(0)) / Y.std(0, ddof=1), list(self.variable_names))


@dataclass(frozen=True)
class ModelDims:
    K: int
    F: int

    def __post_init__(self):
        if self.K < 1 or self.F < 1:
            raise ValueError(f"K and F must be >= 1, got K={self.K}, F={self.F}")

    def validate(self, data: Dataset):
        if self.F > data.R:
            raise ValueError(f"F={self.F} exceeds the number of variables R={data.R}")
        if self.K > data.n:
            raise ValueError(f"K={self.K} exceeds the number of subjects n={data.n}")


@dataclass
class State:
    """Full sampler state.

    B : (R, F) loadings, unit diagonal and zero upper triangle in the top block
    tau : (F,) loading-column variances
    sigma2 : (R,) idiosyncratic variances
    mu : (K, F) cluster means of the factors
    omega : (K, F, F) cluster covariances; ``omega[0]`` is exactly diagonal
    p : (K,) cluster weights
    z : (n,) 0-based cluster labels
    X : (n, F) latent factors
    """

    B: np.ndarray
    tau: np.ndarray
    sigma2: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    z: np.ndarray
    X: np.ndarray

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def F(self):
        return self.B.shape[1]

    def copy(self) -> "State":
        return State(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def check(self):
        """Assert the structural invariants; raises ValueError on violation."""
        check_loadings_constraint(self.B)
        off = self.omega[0] - np.diag(np.diag(self.omega[0]))
        if np.any(off != 0.0):
            raise ValueError("omega[0] must be exactly diagonal")
        if abs(self.p.sum() - 1.0) > 1e-12 or np.any(self.p < 0):
            raise ValueError("p is not on the simplex")
        if self.z.min() < 0 or self.z.max() >= self.K:
            raise ValueError("cluster label out of range")
        if np.any(self.sigma2 <= 0) or np.any(self.tau <= 0):
            raise ValueError("variances must be positive")


def check_loadings_constraint(B):
    F = B.shape[1]
    top = B[:F, :F]
    if np.any(np.diag(top) != 1.0) or np.any(np.triu(top, 1) != 0.0):
        raise ValueError("B violates the hierarchical structural constraint")


@dataclass
class PriorSpec:
    """Hyperparameters.

    ``n_sigma``/``s2_sigma`` and the others follow the convention that the
    inverse gamma prior is ``IG(n/2, n*s2/2)``.  ``Psi[0]`` is unused (cluster
    0 has the diagonal inverse gamma prior) and kept only to align indices.
    """

    m: np.ndarray  # (K, F)
    C: np.ndarray  # (K, F, F)
    nu: float
    Psi: np.ndarray  # (K, F, F)
    alpha: np.ndarray  # (K,)
    n_omega: np.ndarray  # (F,)
    s2_omega: np.ndarray  # (F,)
    n_sigma: float = 2.2
    s2_sigma: float = 0.1 / 2.2
    n_tau: float = 1.0
    s2_tau: float = 1.0

    @property
    def K(self):
        return self.m.shape[0]

    @property
    def F(self):
        return self.m.shape[1]


@dataclass
class ElicitationArtifacts:
    B_hat: np.ndarray
    V_hat: np.ndarray
    M: np.ndarray
    B_star: np.ndarray
    X_hat: np.ndarray
    km_labels: np.ndarray
    S: np.ndarray
    ldl: LdlFactors
    X_tilde: np.ndarray
    B_tilde: np.ndarray = field(default=None)

    @property
    def L1(self):
        return self.ldl.L

    @property
    def D1(self):
        return self.ldl.D


# ---------------------------------------------------------------------------
# preliminary factor analysis


def _correlation(Y):
    sd = Y.std(axis=0, ddof=1)
    if np.any(~(sd > 0)):
        bad = int(np.flatnonzero(~(sd > 0))[0])
        raise ElicitationError(f"column {bad} has zero variance")
    Z = (Y - Y.mean(0)) / sd
    Rm = Z.T @ Z / (Y.shape[0] - 1)
    return 0.5 * (Rm + Rm.T), sd


def preliminary_factor_analysis(data: Dataset, F: int, tol=1e-6, max_iter=200):
    """Iterated principal-axis factoring of the correlation matrix.

    Communalities start at the squared multiple correlations and are iterated
    until the largest change falls below ``tol``.  Communalities are capped at
    0.995 to avoid Heywood cases.  With ``F == R`` the model is saturated and
    the full correlation matrix is reproduced, leaving uniquenesses at a
    machine-level floor.

    Returns ``(B_hat, V_hat)`` on the raw data scale: loadings are multiplied
    by the column standard deviations and uniquenesses by the variances.
    """
    Y = data.Y
    R = data.R
    if not 1 <= F <= R:
        raise ValueError(f"F must be between 1 and R={R}, got {F}")
    Rm, sd = _correlation(Y)

    if F == R:
        vals, vecs = np.linalg.eigh(Rm)
        if vals[0] <= 0:
            raise ElicitationError("correlation matrix is singular; cannot extract F = R factors")
        vals, vecs = vals[::-1], vecs[:, ::-1]
        Lam = vecs * np.sqrt(vals)
        uniq = np.full(R, np.finfo(float).eps)
    else:
        try:
            h = 1.0 - 1.0 / np.diag(np.linalg.inv(Rm))
        except np.linalg.LinAlgError:
            h = np.max(np.abs(Rm - np.eye(R)), axis=1)
        h = np.clip(h, 0.005, 0.995)
        for _ in range(max_iter):
            Rh = Rm.copy()
            np.fill_diagonal(Rh, h)
            vals, vecs = np.linalg.eigh(Rh)
            vals, vecs = vals[::-1][:F], vecs[:, ::-1][:, :F]
            if vals[-1] <= 0:
                raise ElicitationError(
                    f"F={F} exceeds the number of positive eigenvalues of the reduced "
                    "correlation matrix"
                )
            Lam = vecs * np.sqrt(vals)
            h_new = np.clip((Lam**2).sum(axis=1), 0.0, 0.995)
            done = np.max(np.abs(h_new - h)) < tol
            h = h_new
            if done:
                break
        uniq = 1.0 - h
    B_hat = sd[:, None] * Lam
    V_hat = sd**2 * uniq
    return B_hat, V_hat


def rotate_to_constraint(B_hat, max_cond=1e8):
    """Right-multiply loadings so the leading ``F x F`` block is the identity.

    Returns ``(B_star, M)`` with ``B_star = B_hat @ M`` and ``M`` the inverse
    of the leading block.  The leading block of ``B_star`` is set to exactly
    the identity.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    F = B_hat.shape[1]
    lead = B_hat[:F, :F]
    cond = np.linalg.cond(lead)
    if not cond < max_cond:
        raise ElicitationError(
            f"the leading {F}x{F} block of the preliminary loadings is near singular "
            f"(condition number {cond:.3g}); reorder the variables so that each of the "
            f"first {F} variables is driven by a distinct factor"
        )
    M = np.linalg.inv(lead)
    B_star = B_hat @ M
    B_star[:F, :F] = np.eye(F)
    return B_star, M


def estimate_factors(B_star, V_hat, data: Dataset):
    """Generalized least squares factor scores, one row per subject."""
    B = np.asarray(B_star, dtype=float)
    w = 1.0 / np.asarray(V_hat, dtype=float)
    G = B.T @ (w[:, None] * B)
    if np.linalg.matrix_rank(G) < B.shape[1]:
        raise ElicitationError("loadings matrix is rank deficient")
    return np.linalg.solve(G, B.T @ (w[:, None] * data.Y.T)).T


# ---------------------------------------------------------------------------
# k-means


def _sq_dists(X, centers):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_objective(X, labels, centers, criterion="distance"):
    """Sum of Euclidean distances (``"distance"``) or of squared distances
    (``"inertia"``) from points to their assigned centers."""
    d2 = ((X - centers[labels]) ** 2).sum(1)
    if criterion == "distance":
        return float(np.sqrt(d2).sum())
    if criterion == "inertia":
        return float(d2.sum())
    raise ValueError(f"unknown criterion {criterion!r}")


def _lloyd(X, centers, tol=1e-8, max_iter=100):
    """One Lloyd run; returns ``(labels, centers, distance_sum, inertia)``."""
    centers = np.array(centers, dtype=float, order="C")
    labels, dist, ssq = _core.lloyd(X, centers, tol, max_iter)
    return labels.astype(np.intp), centers, dist, ssq


def kmeans_restarts(X, K, restarts=50, rng=None, criterion="distance"):
    """Lloyd's algorithm from ``restarts`` random starts; keep the best fit.

    Each restart starts from ``K`` distinct data points drawn at random and
    iterates to a relative objective change below 1e-8 (at most 100 steps).
    An empty cluster is re-seeded at the point farthest from its center.
    Restarts are compared by the sum of unsquared Euclidean distances to the
    assigned centers (``criterion="distance"``) or by the within-cluster sum
    of squares (``criterion="inertia"``).

    Returns ``(labels, centers)`` with 0-based labels.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must be between 1 and n={n}, got {K}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if K == 1:
        return np.zeros(n, dtype=np.intp), X.mean(0, keepdims=True)
    if criterion not in ("distance", "inertia"):
        raise ValueError(f"unknown criterion {criterion!r}")
    X = np.ascontiguousarray(X)
    gen = as_generator(rng)
    best = None
    for _ in range(restarts):
        start = X[gen.choice(n, size=K, replace=False)]
        labels, centers, dist, ssq = _lloyd(X, start)
        obj = dist if criterion == "distance" else ssq
        if best is None or obj < best[0]:
            best = (obj, labels, centers)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# priors


def _relabel_by_size(labels, K):
    counts = np.bincount(labels, minlength=K)
    order = np.argsort(-counts, kind="stable")
    remap = np.empty(K, dtype=np.intp)
    remap[order] = np.arange(K)
    return remap[labels]


def elicit_priors(X_hat, labels, K):
    """Empirical-Bayes hyperparameters from preliminary factors and k-means labels.

    Clusters are first relabeled in decreasing order of size, so the largest
    k-means cluster becomes cluster 0 (the diagonal-covariance cluster).
    Returns ``(prior, pieces)`` where ``pieces`` holds the within-cluster
    covariances ``S``, the LDL factors of ``S[0]``, the transformed factors
    ``X_tilde`` and the relabeled ``labels``.
    """
    X_hat = np.asarray(X_hat, dtype=float)
    n, F = X_hat.shape
    labels = _relabel_by_size(np.asarray(labels), K)
    counts = np.bincount(labels, minlength=K)
    if counts.min() < F + 2:
        raise ElicitationError(
            f"k-means cluster of size {counts.min()} is too small to estimate an "
            f"{F}x{F} covariance (need at least {F + 2}); use a smaller K or more data"
        )
    S = np.empty((K, F, F))
    for k in range(K):
        S[k] = np.atleast_2d(np.cov(X_hat[labels == k], rowvar=False))
    try:
        cholesky(S, "S")
    except np.linalg.LinAlgError as exc:
        raise ElicitationError(
            f"singular within-cluster covariance ({exc}); use a smaller K or more data"
        ) from exc
    ldl = ldl_decompose(S[0])
    Linv = solve_triangular(ldl.L, np.eye(F), lower=True, unit_diagonal=True)
    X_tilde = X_hat @ Linv.T
    Ct = Linv @ S @ Linv.T
    Ct = 0.5 * (Ct + np.swapaxes(Ct, -1, -2))
    m = np.stack([X_tilde[labels == k].mean(0) for k in range(K)])
    prior = PriorSpec(
        m=m,
        C=Ct.copy(),
        nu=F + 2.0,
        Psi=Ct.copy(),
        alpha=np.full(K, 2.0),
        n_omega=np.full(F, 4.0),
        s2_omega=ldl.D.copy(),
    )
    return prior, dict(S=S, ldl=ldl, X_tilde=X_tilde, labels=labels)


def elicit(data: Dataset, dims: ModelDims, rng=None, restarts=50):
    """Run the complete elicitation; returns ``(prior, artifacts)``."""
    dims.validate(data)
    B_hat, V_hat = preliminary_factor_analysis(data, dims.F)
    B_star, M = rotate_to_constraint(B_hat)
    X_hat = estimate_factors(B_star, V_hat, data)
    labels, _ = kmeans_restarts(X_hat, dims.K, restarts=restarts, rng=rng)
    prior, pieces = elicit_priors(X_hat, labels, dims.K)
    B_tilde = B_star @ pieces["ldl"].L
    B_tilde[: dims.F, : dims.F] = np.tril(B_tilde[: dims.F, : dims.F])
    np.fill_diagonal(B_tilde[: dims.F, : dims.F], 1.0)
    art = ElicitationArtifacts(
        B_hat=B_hat,
        V_hat=V_hat,
        M=M,
        B_star=B_star,
        X_hat=X_hat,
        km_labels=pieces["labels"],
        S=pieces["S"],
        ldl=pieces["ldl"],
        X_tilde=pieces["X_tilde"],
        B_tilde=B_tilde,
    )
    return prior, art


def initial_state(prior: PriorSpec, art: ElicitationArtifacts, sigma2=0.5, tau=1.0) -> State:
    """Sampler starting point built from the elicitation artifacts.

    Factors, loadings and labels come from the preliminary fit; cluster means
    and covariances start at their prior means (the prior mean of a diagonal
    element of ``omega[0]`` is ``n s2 / (n - 2)``); weights start at the
    posterior mean of the Dirichlet given the k-means counts.
    """
    K, F = prior.K, prior.F
    R = art.B_tilde.shape[0]
    z = art.km_labels.astype(np.intp)
    counts = np.bincount(z, minlength=K)
    omega = prior.Psi.copy() / (prior.nu - F - 1.0)
    n_om = prior.n_omega
    omega[0] = np.diag(n_om * prior.s2_omega / (n_om - 2.0))
    p = (counts + prior.alpha) / (counts + prior.alpha).sum()
    return State(
        B=art.B_tilde.copy(),
        tau=np.full(F, float(tau)),
        sigma2=np.full(R, float(sigma2)),
        mu=prior.m.copy(),
        omega=omega,
        p=p,
        z=z,
        X=art.X_tilde.copy(),
    )
