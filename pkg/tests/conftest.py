import numpy as np
import pytest

from bcfm.model import PriorSpec, State


def random_spd(rng, p, scale=1.0):
    A = rng.standard_normal((p, p))
    return scale * (A @ A.T / p + 0.5 * np.eye(p))


def random_instance(rng, n=30, R=6, F=2, K=2):
    """A random valid (Y, state, prior) triple for conditional checks."""
    B = np.tril(rng.standard_normal((R, F)) * 0.7, k=-1)
    B[np.arange(F), np.arange(F)] = 1.0
    omega = np.stack([random_spd(rng, F) for _ in range(K)])
    omega[0] = np.diag(rng.uniform(0.5, 2.0, F))
    p = rng.dirichlet(np.full(K, 3.0))
    z = rng.integers(0, K, n)
    z[:K] = np.arange(K)
    mu = rng.standard_normal((K, F)) * 2
    X = mu[z] + rng.standard_normal((n, F))
    sigma2 = rng.uniform(0.2, 1.0, R)
    Y = X @ B.T + rng.standard_normal((n, R)) * np.sqrt(sigma2)
    state = State(B=B, tau=rng.uniform(0.3, 2.0, F), sigma2=sigma2, mu=mu, omega=omega, p=p,
                  z=z.astype(np.int64), X=X)
    prior = PriorSpec(
        m=rng.standard_normal((K, F)),
        C=np.stack([random_spd(rng, F, 3.0) for _ in range(K)]),
        nu=F + 2.0,
        Psi=np.stack([random_spd(rng, F) for _ in range(K)]),
        alpha=np.full(K, 2.0),
        n_omega=np.full(F, 4.0),
        s2_omega=rng.uniform(0.5, 2.0, F),
    )
    return Y, state, prior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def instance(rng):
    return random_instance(rng)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion in the terminal summary

CRITERIA = {}


def record_criterion(number, part, passed, detail):
    """Register the outcome of one check belonging to acceptance criterion ``number``."""
    CRITERIA.setdefault(number, []).append((part, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(CRITERIA):
        parts = CRITERIA[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}{' ' if p else ''}{'ok' if ok else 'FAIL'}: {d}"
                           for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {number}: {status} | {detail}")
