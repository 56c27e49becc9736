import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssiv import (
    MISSING_SHOCK,
    ExposureMatrix,
    ObservationTable,
    PanelBundle,
    ShockTable,
    add_exposure_weighted_controls,
    bundle_from_dense,
    complete_shares,
    load_bundle,
    relabel_panel,
)
from ssiv.data import load_observations, load_shares, load_shocks, write_observations, write_shares, write_shocks
from ssiv.errors import (
    ConsistencyError,
    DuplicateKeyError,
    ParseError,
    ReferentialError,
    SchemaError,
    ValidationError,
)

from conftest import random_shares


def _tables(periods=False):
    per = [1, 1] if periods else None
    obs = ObservationTable.from_arrays(["a", "b"], [1.0, 2.0], [0.5, 0.1], weight=[1, 3], period=per)
    sh = ShockTable.from_arrays(["n1", "n2"], [0.3, -0.2], period=per)
    return obs, sh


def test_weights_normalized_and_constant_appended():
    obs, sh = _tables()
    assert obs.weight.sum() == pytest.approx(1.0)
    assert obs.weight[1] == pytest.approx(0.75)
    assert obs.w_names == ("const",)
    assert sh.q_names == ("const",)


def test_arrays_are_read_only():
    obs, _ = _tables()
    with pytest.raises(ValueError):
        obs.y[0] = 3.0


def test_nonpositive_weight_names_row():
    with pytest.raises(ValidationError, match="row 2"):
        ObservationTable.from_arrays(["a", "b"], [1, 2], [1, 2], weight=[1, 0])


def test_negative_share_names_row():
    with pytest.raises(ValidationError, match="negative share .* row 2"):
        ExposureMatrix.from_triplets(["a", "a"], ["n1", "n2"], [0.5, -0.1])


def test_duplicate_share_key():
    with pytest.raises(DuplicateKeyError, match="row 2"):
        ExposureMatrix.from_triplets(["a", "a"], ["n1", "n1"], [0.2, 0.1])


def test_duplicate_observation_key():
    with pytest.raises(DuplicateKeyError):
        ObservationTable.from_arrays(["a", "a"], [1, 2], [1, 2])


def test_oversized_rows():
    ok = ExposureMatrix.from_triplets(["a", "a"], ["n1", "n2"], [0.6, 0.4 + 5e-10])
    assert sum(ok.share) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValidationError, match="sum to"):
        ExposureMatrix.from_triplets(["a", "a"], ["n1", "n2"], [0.6, 0.5])
    loose = ExposureMatrix.from_triplets(["a", "a"], ["n1", "n2"], [0.6, 0.5], allow_oversized=True)
    assert loose.share.sum() == pytest.approx(1.1)


def test_referential_error_names_the_shock():
    obs, sh = _tables()
    ex = ExposureMatrix.from_triplets(["a", "b"], ["n1", "zz"], [1.0, 1.0])
    with pytest.raises(ReferentialError, match="zz"):
        PanelBundle(obs, ex, sh)


def test_period_presence_must_agree():
    obs, _ = _tables(periods=True)
    _, sh = _tables(periods=False)
    ex = ExposureMatrix.from_triplets(["a", "b"], ["n1", "n2"], [1.0, 1.0], period=[1, 1])
    with pytest.raises(ConsistencyError):
        PanelBundle(obs, ex, sh)


def test_cross_period_links_are_unknown_keys():
    obs = ObservationTable.from_arrays(["a", "a"], [1, 2], [1, 2], period=[1, 2])
    sh = ShockTable.from_arrays(["n", "n"], [1, 2], period=[1, 2])
    ex = ExposureMatrix.from_triplets(["a"], ["n"], [1.0], period=[3])
    with pytest.raises(ReferentialError):
        PanelBundle(obs, ex, sh)


def test_dense_bundle_matrix_roundtrip(rng):
    S = random_shares(rng, 8, 5)
    b = bundle_from_dense(S, rng.normal(size=8), rng.normal(size=8), rng.normal(size=5))
    np.testing.assert_allclose(b.matrix.toarray(), S, atol=1e-15)
    assert not b.incomplete


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_complete_shares_gives_unit_rows(seed):
    rng = np.random.default_rng(seed)
    S = random_shares(rng, 12, 4, complete=False)
    b = bundle_from_dense(S, rng.normal(size=12), rng.normal(size=12), rng.normal(size=4))
    assert b.incomplete
    c = complete_shares(b)
    assert not c.incomplete
    np.testing.assert_allclose(c.row_sums, 1.0, atol=1e-12)
    assert MISSING_SHOCK in c.shocks.shock_id.tolist()
    assert "share_sum" in c.observations.w_names
    assert "observed_shock" in c.shocks.q_names
    np.testing.assert_allclose(c.observations.column("share_sum"), S.sum(axis=1))


def test_complete_shares_on_complete_bundle_warns(rng):
    S = random_shares(rng, 5, 3)
    b = bundle_from_dense(S, np.ones(5), np.arange(5.0), np.arange(3.0))
    with pytest.warns(UserWarning, match="no-op"):
        assert complete_shares(b) is b


def _panel(rng, L=6, N=4, T=2, complete=False):
    Ss = [random_shares(rng, L, N, complete=complete) for _ in range(T)]
    S = np.zeros((L * T, N * T))
    for t in range(T):
        S[t * L:(t + 1) * L, t * N:(t + 1) * N] = Ss[t]
    oid = [f"l{i}" for i in range(L)] * T
    sid = [f"n{j}" for j in range(N)] * T
    return bundle_from_dense(S, rng.normal(size=L * T), rng.normal(size=L * T), rng.normal(size=N * T),
                             obs_period=np.repeat(np.arange(T) + 2000, L),
                             shock_period=np.repeat(np.arange(T) + 2000, N), obs_ids=oid, shock_ids=sid)


def test_panel_completion_interacts_with_periods(rng):
    c = complete_shares(_panel(rng))
    assert c.observations.w_names[-2:] == ("share_sum_t2000", "share_sum_t2001")
    assert c.shocks.q_names[-2:] == ("observed_shock_t2000", "observed_shock_t2001")
    assert int(np.sum(c.shocks.shock_id == MISSING_SHOCK)) == 2


def test_relabel_panel_ids_and_labels(rng):
    b = _panel(rng, complete=True)
    r = relabel_panel(b)
    assert r.observations.period is None
    assert r.observations.obs_id[0] == "l0|2000"
    assert r.shocks.labels["base_id"][0] == "n0"
    np.testing.assert_array_equal(r.matrix.toarray(), b.matrix.toarray())


def test_relabel_single_period_is_identity(rng):
    S = random_shares(rng, 4, 3)
    b = bundle_from_dense(S, np.ones(4), np.arange(4.0), np.arange(3.0),
                          obs_period=[5] * 4, shock_period=[5] * 3)
    assert relabel_panel(b) is b


def test_exposure_weighted_controls(rng):
    S = random_shares(rng, 6, 3)
    q = rng.normal(size=(3, 1))
    b = bundle_from_dense(S, np.ones(6), np.arange(6.0), np.arange(3.0), q=q, q_names=["q1"])
    b2 = add_exposure_weighted_controls(b, ["q1"])
    np.testing.assert_allclose(b2.observations.column("sw_q1"), S @ q[:, 0])


def test_csv_roundtrip(tmp_path, rng):
    b = _panel(rng, complete=True)
    os_ = write_observations(b.observations, tmp_path / "o.csv")
    ss = write_shares(b.exposures, tmp_path / "s.csv")
    ks = write_shocks(b.shocks, tmp_path / "k.csv")
    b2 = load_bundle(tmp_path / "o.csv", tmp_path / "s.csv", tmp_path / "k.csv", os_, ss, ks)
    np.testing.assert_array_equal(b2.matrix.toarray(), b.matrix.toarray())
    np.testing.assert_array_equal(b2.observations.y, b.observations.y)
    np.testing.assert_array_equal(b2.shocks.g, b.shocks.g)


def test_schema_map_with_string_lists(tmp_path):
    pd.DataFrame({"id": ["a", "b"], "out": [1, 2], "t1": [3, 4], "t2": [1, 0], "c": [0.1, 0.2],
                  "pop": [1, 2]}).to_csv(tmp_path / "o.csv", index=False)
    tab = load_observations(tmp_path / "o.csv", {"y": "out", "x": "t1,t2", "w": "c", "id": "id",
                                                 "weight": "pop"})
    assert tab.x_names == ("t1", "t2")
    assert tab.w_names == ("c", "const")


def test_unknown_schema_field(tmp_path):
    with pytest.raises(SchemaError, match="unknown"):
        load_observations(tmp_path / "o.csv", {"outcome": "y"})


def test_missing_file_is_schema_error(tmp_path):
    with pytest.raises(SchemaError, match="not found"):
        load_shares(tmp_path / "nope.csv")


def test_missing_column_is_schema_error(tmp_path):
    pd.DataFrame({"shock_id": ["a"], "h": [1.0]}).to_csv(tmp_path / "k.csv", index=False)
    with pytest.raises(SchemaError, match="missing column.*g"):
        load_shocks(tmp_path / "k.csv")


def test_unparseable_number_names_row_and_column(tmp_path):
    pd.DataFrame({"obs_id": ["a", "b"], "shock_id": ["n", "n"], "share": ["0.5", "abc"]}).to_csv(
        tmp_path / "s.csv", index=False)
    with pytest.raises(ParseError, match="share.*row 2"):
        load_shares(tmp_path / "s.csv")


def test_unweighted_ignores_weight_column(tmp_path):
    pd.DataFrame({"obs_id": ["a", "b"], "y": [1, 2], "x": [3, 4]}).to_csv(tmp_path / "o.csv", index=False)
    tab = load_observations(tmp_path / "o.csv", unweighted=True)
    np.testing.assert_allclose(tab.weight, [0.5, 0.5])
