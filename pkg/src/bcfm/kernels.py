"""Seeded random streams, conjugate samplers and small dense linear algebra.

Every sampler takes an ``rng`` argument that may be an :class:`RngStream`, a
:class:`numpy.random.Generator`, an integer seed or ``None`` (see
:func:`as_generator`).  Samplers that operate on stacks of parameters (leading
batch axis) are vectorized so the Gibbs sweep does not loop in Python.

Parameterizations
-----------------
* Inverse gamma ``IG(shape, scale)`` has density proportional to
  ``x**(-shape - 1) * exp(-scale / x)``; mean ``scale / (shape - 1)``.
* Inverse Wishart ``IW(df, scale)`` on ``p x p`` matrices has density
  proportional to ``|W|**(-(df + p + 1) / 2) * exp(-tr(scale W^-1) / 2)``;
  mean ``scale / (df - p - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

from . import _core

__all__ = [
    "NotPositiveDefiniteError",
    "RngStream",
    "as_generator",
    "LdlFactors",
    "cholesky",
    "ldl_decompose",
    "sample_mvn",
    "sample_mvn_precision",
    "sample_inverse_gamma",
    "sample_inverse_wishart",
    "sample_dirichlet",
    "sample_categorical",
    "sample_categorical_rows",
    "mvn_logpdf",
    "inverse_gamma_logpdf",
    "inverse_wishart_logpdf",
    "dirichlet_logpdf",
]

LOG_2PI = float(np.log(2.0 * np.pi))


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization hits a non-positive pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    The bit generator is PCG64 seeded through :class:`numpy.random.SeedSequence`
    with ``stream_id`` as the spawn key, so distinct ids give independent
    streams and the integer sequence is identical across platforms.  The
    floating point transforms are numpy's (stable within one numpy version).

    ``stream_id`` may be a tuple to address nested substreams; use
    :meth:`spawn` to derive them.
    """

    seed: int
    stream_id: Union[int, tuple] = 0
    _generator: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.seed = int(self.seed)

    @property
    def key(self) -> tuple:
        sid = self.stream_id
        return tuple(int(s) for s in sid) if isinstance(sid, tuple) else (int(sid),)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._generator = np.random.Generator(np.random.PCG64(ss))
        return self._generator

    def spawn(self, *ids: int) -> "RngStream":
        """Return an independent substream keyed by this stream's key plus ``ids``."""
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))


def as_generator(rng) -> np.random.Generator:
    """Coerce ``rng`` (RngStream, Generator, int seed or None) to a Generator."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot interpret {rng!r} as a random stream")


# ---------------------------------------------------------------------------
# linear algebra


def _first_bad_pivot(a):
    """Index of the first non-positive pivot of an unpivoted Cholesky of ``a``."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return j
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return None


def cholesky(a, what="matrix"):
    """Lower Cholesky factor of ``a`` (or of each matrix in a stack).

    Raises :class:`NotPositiveDefiniteError` naming the failing pivot (and the
    batch index for stacked input) instead of numpy's bare error.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    if a.ndim == 2:
        piv = _first_bad_pivot(a)
        raise NotPositiveDefiniteError(
            f"{what} is not positive definite (Cholesky pivot {piv} is not positive)", pivot=piv
        )
    flat = a.reshape(-1, *a.shape[-2:])
    for b, m in enumerate(flat):
        piv = _first_bad_pivot(m)
        if piv is not None:
            idx = np.unravel_index(b, a.shape[:-2])
            raise NotPositiveDefiniteError(
                f"{what}[{', '.join(map(str, idx))}] is not positive definite "
                f"(Cholesky pivot {piv} is not positive)",
                pivot=piv,
            )
    raise NotPositiveDefiniteError(f"{what} is not positive definite")


class LdlFactors(NamedTuple):
    """``S = L @ diag(D) @ L.T`` with unit lower-triangular ``L``."""

    L: np.ndarray
    D: np.ndarray

    def reconstruct(self):
        return (self.L * self.D) @ self.L.T


def ldl_decompose(S) -> LdlFactors:
    """Unpivoted LDL decomposition of a symmetric positive definite matrix.

    Obtained from the Cholesky factor ``G``: ``D = diag(G)**2`` and
    ``L = G / diag(G)``.  The diagonal of ``L`` is set to exactly one and its
    strict upper triangle to exactly zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    G = cholesky(S, "S")
    g = np.diag(G).copy()
    L = np.tril(G / g, k=-1)
    np.fill_diagonal(L, 1.0)
    return LdlFactors(L, g * g)


# ---------------------------------------------------------------------------
# samplers


def sample_mvn(mean, cov, rng, size=None):
    """Draw from ``N(mean, cov)`` via the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.shape[-1], mean.shape[-1]):
        raise ValueError(f"mean has length {mean.shape[-1]} but cov has shape {cov.shape}")
    L = cholesky(cov, "cov")
    gen = as_generator(rng)
    shape = mean.shape if size is None else (*np.atleast_1d(size), mean.shape[-1])
    eps = gen.standard_normal(shape)
    return mean + eps @ L.T


def sample_mvn_precision(precision, linear, rng):
    """Draw from ``N(P^-1 h, P^-1)`` given precision ``P`` and linear term ``h``.

    Both arguments may carry one leading batch axis.  With ``P = U U^T`` the
    draw is ``U^-T (U^-1 h + eps)``.  This is the canonical form of every
    Gaussian full conditional in the sampler.
    """
    P = np.ascontiguousarray(precision, dtype=float)
    h = np.ascontiguousarray(linear, dtype=float)
    single = h.ndim == 1
    Pb, hb = (P[None], h[None]) if single else (P, h)
    if Pb.shape != (*hb.shape, hb.shape[-1]):
        raise ValueError(f"precision shape {P.shape} does not match linear term {h.shape}")
    out, b, piv = _core.mvn_prec_draw_batch(as_generator(rng), Pb, hb)
    if piv >= 0:
        where = "" if single else f"[{b}]"
        raise NotPositiveDefiniteError(
            f"precision{where} is not positive definite (Cholesky pivot {piv} is not positive)", pivot=piv
        )
    return out[0] if single else out


def sample_inverse_gamma(shape, scale, rng, size=None):
    """Draw from ``IG(shape, scale)``; arrays broadcast elementwise."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(scale > 0)):
        raise ValueError("inverse gamma shape and scale must be positive")
    out_shape = np.broadcast_shapes(shape.shape, scale.shape, () if size is None else tuple(np.atleast_1d(size)))
    a = np.ascontiguousarray(np.broadcast_to(shape, out_shape)).ravel()
    b = np.ascontiguousarray(np.broadcast_to(scale, out_shape)).ravel()
    out = _core.ig_draw(as_generator(rng), a, b).reshape(out_shape)
    return float(out) if out.ndim == 0 else out


def sample_inverse_wishart(df, scale, rng):
    """Draw from ``IW(df, scale)``; ``scale`` may be a stack ``(m, p, p)``.

    Bartlett construction: with ``scale = C C^T`` and a Bartlett factor ``A``
    of ``W(df, I)``, the matrix ``C^-T A A^T C^-1`` is ``W(df, scale^-1)`` and
    its inverse ``(C A^-T)(C A^-T)^T`` is the requested draw.
    """
    scale = np.ascontiguousarray(scale, dtype=float)
    single = scale.ndim == 2
    S = scale[None] if single else scale
    m, p = S.shape[0], S.shape[-1]
    df = np.ascontiguousarray(np.broadcast_to(np.asarray(df, dtype=float), (m,)))
    if np.any(~(df > p - 1)):
        raise ValueError(f"inverse Wishart needs df > dim - 1 = {p - 1}, got {df}")
    if np.any(np.abs(S - np.swapaxes(S, -1, -2)) > 1e-12 * np.abs(S).max()):
        raise ValueError("inverse Wishart scale must be symmetric")
    out, b, piv = _core.iw_draw_batch(as_generator(rng), df, S)
    if piv >= 0:
        where = "" if single else f"[{b}]"
        raise NotPositiveDefiniteError(
            f"scale{where} is not positive definite (Cholesky pivot {piv} is not positive)", pivot=piv
        )
    return out[0] if single else out


def sample_dirichlet(alphas, rng):
    """Draw a probability vector from ``Dirichlet(alphas)`` by gamma normalization."""
    alphas = np.ascontiguousarray(alphas, dtype=float)
    if alphas.ndim != 1:
        raise ValueError("alphas must be a vector")
    if np.any(~(alphas > 0)):
        raise ValueError("Dirichlet parameters must be positive")
    return _core.dirichlet_draw(as_generator(rng), alphas)


def sample_categorical(log_weights, rng):
    """Draw one index with probability proportional to ``exp(log_weights)``."""
    lw = np.asarray(log_weights, dtype=float)
    return int(sample_categorical_rows(lw[None, :], rng)[0])


def sample_categorical_rows(log_weights, rng):
    """Row-wise categorical draws from an ``(n, K)`` matrix of log-weights.

    Uses one uniform per row against the cumulative max-shifted weights.
    """
    lw = np.ascontiguousarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    out = _core.categorical_rows(as_generator(rng), lw)
    if np.any(out < 0):
        raise ValueError("every row of log-weights needs at least one finite entry")
    return out


# ---------------------------------------------------------------------------
# log densities


def mvn_logpdf(y, mean, cov):
    """Log density of ``N(mean, cov)`` at ``y`` (rows of ``y`` if 2-d)."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = cov.shape[0]
    if y.shape[-1] != p or mean.shape[-1] != p:
        raise ValueError(f"dimension mismatch: y {y.shape}, mean {mean.shape}, cov {cov.shape}")
    L = cholesky(cov, "cov")
    diff = np.atleast_2d(y - mean)
    w = solve_triangular(L, diff.T, lower=True)
    out = -0.5 * (p * LOG_2PI + (w * w).sum(axis=0)) - np.log(np.diag(L)).sum()
    return float(out[0]) if y.ndim == 1 else out


def inverse_gamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def inverse_wishart_logpdf(W, df, scale):
    W = np.asarray(W, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = W.shape[-1]
    _, logdet_s = np.linalg.slogdet(scale)
    _, logdet_w = np.linalg.slogdet(W)
    tr = np.trace(np.linalg.solve(W, scale))
    return (
        0.5 * df * logdet_s
        - 0.5 * df * p * np.log(2.0)
        - multigammaln(0.5 * df, p)
        - 0.5 * (df + p + 1.0) * logdet_w
        - 0.5 * tr
    )


def dirichlet_logpdf(p, alphas):
    p = np.asarray(p, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 1:
        return 0.0
    return float(gammaln(alphas.sum()) - gammaln(alphas).sum() + ((alphas - 1.0) * np.log(p)).sum())
