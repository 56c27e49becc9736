import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssiv.errors import EstimationError, RankError, ValidationError
from ssiv.regress import Residualizer, iv_fit, sandwich_vcov, score_meat, wdot, wls_residualize

from oracles import wls_resid


def test_residualizer_matches_normal_equations(rng):
    W = rng.normal(size=(40, 3))
    V = rng.normal(size=(40, 2))
    w = rng.uniform(0.1, 2, 40)
    np.testing.assert_allclose(Residualizer(W, w)(V), wls_resid(V, W, w), rtol=0, atol=1e-12)


def test_collinear_control_is_dropped_and_reported(rng):
    W = rng.normal(size=(30, 2))
    W = np.column_stack([W, W[:, 0] + 2 * W[:, 1]])
    block = wls_residualize(rng.normal(size=30), W, np.ones(30), w_names=["a", "b", "c"])
    assert block.rank == 2
    assert len(block.dropped) == 1
    assert np.allclose(block.coef[list(block.dropped)], 0.0)


def test_empty_control_set_is_identity(rng):
    v = rng.normal(size=10)
    np.testing.assert_array_equal(Residualizer(np.zeros((10, 0)), np.ones(10))(v), v)


@pytest.mark.parametrize("w, msg", [(-1.0, "negative"), (np.nan, "non-finite"), (0.0, "all zero")])
def test_bad_weights_raise(w, msg):
    with pytest.raises(ValidationError, match=msg):
        Residualizer(np.ones((4, 1)), np.full(4, w))


def test_nonfinite_variable_is_named():
    V = np.array([[1.0], [np.inf], [2.0]])
    with pytest.raises(ValidationError, match="'ybar'"):
        Residualizer(np.ones((3, 1)), np.ones(3)).fit(V, ["ybar"])


@given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=5, max_value=40),
       st.integers(min_value=1, max_value=4))
def test_residuals_orthogonal_to_controls(seed, n, p):
    rng = np.random.default_rng(seed)
    p = min(p, n - 1)
    W = rng.normal(size=(n, p)) * rng.uniform(0.01, 100, size=p)
    w = rng.uniform(0.01, 5, n)
    r = Residualizer(W, w)(rng.normal(size=n))
    scale = np.sqrt(np.sum(w[:, None] * W**2, axis=0) * np.sum(w * r**2))
    assert np.all(np.abs(wdot(W, r, w)) <= 1e-10 * np.maximum(scale, 1e-300))


def test_iv_just_identified_closed_form(rng):
    n = 50
    z = rng.normal(size=n)
    x = z + rng.normal(size=n)
    y = 2 * x + rng.normal(size=n)
    w = rng.uniform(0.5, 1.5, n)
    fit = iv_fit(y, x, z, w)
    assert fit.coef[0] == pytest.approx(np.sum(w * z * y) / np.sum(w * z * x), rel=1e-13)


def test_tsls_matches_two_explicit_stages(rng):
    n = 80
    Z = rng.normal(size=(n, 3))
    X = Z @ np.array([[1.0], [0.5], [-0.3]]) + rng.normal(size=(n, 1))
    y = 1.5 * X[:, 0] + rng.normal(size=n)
    w = rng.uniform(0.5, 1.5, n)
    sw = np.sqrt(w)
    Xhat = Z @ np.linalg.lstsq(sw[:, None] * Z, sw[:, None] * X, rcond=None)[0]
    b = np.linalg.lstsq(sw[:, None] * Xhat, sw * y, rcond=None)[0]
    np.testing.assert_allclose(iv_fit(y, X, Z, w).coef, b, rtol=1e-11)


def test_singular_first_stage_raises_rank_error(rng):
    n = 20
    z = rng.normal(size=n)
    x = np.ones(n)
    x = x - np.sum(z * x) / np.sum(z * z) * z  # orthogonal to the instrument
    with pytest.raises(RankError, match="condition number"):
        iv_fit(rng.normal(size=n), x, z, np.ones(n))


def test_fewer_instruments_than_regressors(rng):
    with pytest.raises(EstimationError):
        iv_fit(rng.normal(size=10), rng.normal(size=(10, 2)), rng.normal(size=10), np.ones(10))


def test_hc0_sandwich_formula(rng):
    n = 40
    z, x = rng.normal(size=n), rng.normal(size=n)
    y = rng.normal(size=n)
    w = rng.uniform(0.5, 2, n)
    fit = iv_fit(y, x, z, w)
    v = sandwich_vcov(fit, "hc")
    e = fit.resid
    expect = np.sqrt(np.sum((w * e * z) ** 2)) / abs(np.sum(w * z * x))
    assert v.se[0] == pytest.approx(expect, rel=1e-12)


def test_cluster_meat_factor_and_singletons(rng):
    u = rng.normal(size=(12, 1))
    meat, C, factor = score_meat(u, "cluster", clusters=np.arange(12))
    assert C == 12 and factor == pytest.approx(12 / 11)
    assert meat[0, 0] == pytest.approx(12 / 11 * np.sum(u**2))


def test_single_cluster_is_an_error(rng):
    with pytest.raises(EstimationError, match="two clusters"):
        score_meat(rng.normal(size=(5, 1)), "cluster", clusters=np.zeros(5))


def test_hac_bandwidth_zero_equals_hc(rng):
    u = rng.normal(size=(10, 2))
    hac = score_meat(u, "hac", bandwidth=0, order=np.arange(10))[0]
    np.testing.assert_allclose(hac, score_meat(u, "hac", bandwidth=0, order=np.arange(10))[0])
    np.testing.assert_allclose(hac, score_meat(u, "hc")[0])


def test_hac_bartlett_weights_by_direct_sum(rng):
    n, B = 9, 2
    u = rng.normal(size=(n, 1))
    order = np.arange(n)
    expect = sum(u[i, 0] * u[j, 0] * max(0.0, 1 - abs(i - j) / (B + 1)) for i in range(n) for j in range(n))
    assert score_meat(u, "hac", bandwidth=B, order=order)[0][0, 0] == pytest.approx(expect, rel=1e-12)


def test_hac_lags_stay_within_groups(rng):
    u = rng.normal(size=(6, 1))
    groups = np.array(["a", "a", "a", "b", "b", "b"])
    order = np.array([1, 2, 3, 1, 2, 3])
    got = score_meat(u, "hac", bandwidth=1, order=order, groups=groups)[0][0, 0]
    cross = u[0] * u[1] + u[1] * u[2] + u[3] * u[4] + u[4] * u[5]
    assert got == pytest.approx(float(np.sum(u**2) + cross[0]), rel=1e-12)


def test_hac_bandwidth_too_large():
    with pytest.raises(ValidationError, match="bandwidth"):
        score_meat(np.ones((4, 1)), "hac", bandwidth=4, order=np.arange(4))
