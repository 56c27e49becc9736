import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssiv import bundle_from_dense

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.register_profile("thorough", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("SSIV_HYPOTHESIS_PROFILE", "default"))


def random_shares(rng, L, N, density=0.5, complete=True):
    S = rng.uniform(0.05, 1.0, size=(L, N)) * (rng.uniform(size=(L, N)) < density)
    for l in range(L):
        if not S[l].any():
            S[l, rng.integers(N)] = 1.0
    for n in range(N):
        if not S[:, n].any():
            S[rng.integers(L), n] = 0.5
    S = S / S.sum(axis=1, keepdims=True)
    if not complete:
        S = S * rng.uniform(0.2, 0.9, size=(L, 1))
    return S


def random_instance(rng, L=30, N=10, n_w=2, n_q=1, complete=True, weighted=True, density=0.5,
                    strength=1.0):
    """Dense arrays plus the corresponding bundle."""
    S = random_shares(rng, L, N, density, complete)
    g = rng.normal(size=N)
    q = rng.normal(size=(N, n_q)) if n_q else None
    W = rng.normal(size=(L, n_w)) if n_w else None
    z = S @ g
    x = strength * z + rng.normal(size=L) + (W.sum(axis=1) if n_w else 0)
    y = 0.7 * x + rng.normal(size=L)
    e = rng.uniform(0.5, 3.0, size=L) if weighted else np.ones(L)
    b = bundle_from_dense(S, y, x, g, w=W, q=q, weight=e)
    return {"S": S, "g": g, "q": q, "W": W, "x": x, "y": y, "e": e / e.sum(), "bundle": b}


def with_const(M, n):
    one = np.ones((n, 1))
    return one if M is None else np.column_stack([M, one])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


ACCEPTANCE = {}


def record_criterion(number, status, detail):
    ACCEPTANCE[number] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{status} criterion {n}: {detail}")
