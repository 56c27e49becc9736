import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssiv import bundle_from_dense, complete_shares, load_shock_level, ssaggregate
from ssiv.aggregate import ShareAggregator
from ssiv.errors import SchemaError, ValidationError

from conftest import random_instance, random_shares, with_const
from oracles import shock_aggregates


def test_aggregates_match_direct_loops(rng):
    inst = random_instance(rng, L=25, N=8)
    ds = ssaggregate(inst["bundle"])
    W = with_const(inst["W"], 25)
    s, bars, keep = shock_aggregates(inst["S"], np.column_stack([inst["y"], inst["x"]]), W, inst["e"])
    np.testing.assert_allclose(ds.s, s, rtol=1e-13)
    np.testing.assert_allclose(ds.ybar, bars[:, 0], rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(ds.xbar[:, 0], bars[:, 1], rtol=1e-10, atol=1e-13)


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_weighted_aggregates_sum_to_zero_with_complete_shares(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, L=int(rng.integers(5, 40)), N=int(rng.integers(2, 12)))
    ds = ssaggregate(inst["bundle"])
    for v in (ds.ybar, ds.xbar[:, 0], ds.zbar[:, 0]):
        scale = np.sqrt(np.sum(ds.s * v**2))
        assert abs(np.sum(ds.s * v)) <= 1e-10 * max(scale, 1e-300)


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_shock_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    ds = ssaggregate(random_instance(rng, L=15, N=6)["bundle"])
    assert ds.s.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(ds.s > 0)


def test_zero_exposure_shock_is_dropped_with_warning(rng):
    S = random_shares(rng, 10, 4)
    S = np.column_stack([S, np.zeros(10)])
    b = bundle_from_dense(S, rng.normal(size=10), rng.normal(size=10), rng.normal(size=5))
    with pytest.warns(UserWarning, match="zero exposure"):
        ds = ssaggregate(b)
    assert ds.n == 4
    assert ds.dropped == ("n4",)


def test_incomplete_shares_rejected_without_override(rng):
    inst = random_instance(rng, complete=False)
    with pytest.raises(ValidationError, match="incomplete"):
        ssaggregate(inst["bundle"])
    with pytest.warns(UserWarning, match="incomplete"):
        ds = ssaggregate(inst["bundle"], allow_incomplete=True)
    assert not ds.complete


def test_unexposed_observation_warns(rng):
    S = random_shares(rng, 8, 3)
    S[0] = 0.0
    b = bundle_from_dense(S, rng.normal(size=8), rng.normal(size=8), rng.normal(size=3))
    with pytest.warns(UserWarning, match="no exposure"):
        ds = ssaggregate(b, allow_incomplete=True)
    assert any("unexposed" in n for n in ds.notes)


def test_unknown_control_is_schema_error(rng):
    with pytest.raises(SchemaError, match="nope"):
        ssaggregate(random_instance(rng)["bundle"], controls=["nope"])


def test_constant_always_included(rng):
    inst = random_instance(rng, n_w=2)
    agg = ShareAggregator(inst["bundle"], controls=[])
    assert agg.control_names == ["const"]


def test_extra_variables_aggregated(rng):
    inst = random_instance(rng)
    r = rng.normal(size=30)
    ds = ssaggregate(inst["bundle"], extra={"placebo": r})
    s, bars, _ = shock_aggregates(inst["S"], r, with_const(inst["W"], 30), inst["e"])
    np.testing.assert_allclose(ds.extra["placebo"], bars[:, 0], rtol=1e-10, atol=1e-13)


def test_csv_roundtrip_is_exact(tmp_path, rng):
    inst = random_instance(rng, n_q=2)
    ds = ssaggregate(inst["bundle"])
    ds.to_csv(tmp_path / "sl.csv")
    back = load_shock_level(tmp_path / "sl.csv")
    np.testing.assert_array_equal(back.s, ds.s)
    np.testing.assert_array_equal(back.ybar, ds.ybar)
    np.testing.assert_array_equal(back.xbar, ds.xbar)
    np.testing.assert_array_equal(back.g, ds.g)
    np.testing.assert_array_equal(back.q, ds.q)


def test_missing_shock_appears_in_aggregates(rng):
    inst = random_instance(rng, complete=False)
    ds = ssaggregate(complete_shares(inst["bundle"]))
    assert "__missing__" in ds.shock_id.tolist()
    assert ds.complete
