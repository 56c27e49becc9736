import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
import pytest

from ssiv import cli
from ssiv.cli import main

import oracles

FIX = resources.files("ssiv") / "fixtures"
GOLDEN = Path(__file__).parent / "golden" / "fixture_shock_level.csv"
INPUTS = [
    "--obs", str(FIX / "obs.csv"), "--shares", str(FIX / "shares.csv"), "--shocks", str(FIX / "shocks.csv"),
    "--obs-schema", "y=emp;x=imports;w=;id=cz;period=year;weight=pop",
    "--share-schema", "obs=cz;shock=industry;period=year",
    "--shock-schema", "id=industry;period=year;cluster=sic3",
]
COMPLETE = INPUTS + ["--complete-shares"]


def schema(name):
    return json.loads((resources.files("ssiv") / "schemas" / f"{name}.schema.json").read_text())


def run_json(tmp_path, args, name="out.json"):
    path = tmp_path / name
    code = main(args + ["--json", str(path)])
    assert code == 0
    return json.loads(path.read_text())


def test_aggregate_matches_golden_bytes(tmp_path):
    out = tmp_path / "agg.csv"
    assert main(["aggregate", *COMPLETE, "--out", str(out)]) == 0
    assert out.read_bytes() == GOLDEN.read_bytes()
    manifest = json.loads((tmp_path / "agg.csv.run.json").read_text())
    assert manifest["subcommand"] == "aggregate"


def test_golden_matches_dense_oracle():
    obs = pd.read_csv(FIX / "obs.csv")
    sh = pd.read_csv(FIX / "shares.csv")
    shocks = pd.read_csv(FIX / "shocks.csv")
    okeys = list(zip(obs.cz, obs.year))
    years = sorted(obs.year.unique())
    skeys = list(zip(shocks.industry, shocks.year)) + [("__missing__", t) for t in years]
    oi = {k: i for i, k in enumerate(okeys)}
    si = {k: j for j, k in enumerate(skeys)}
    S = np.zeros((len(okeys), len(skeys)))
    for r in sh.itertuples():
        S[oi[(r.cz, r.year)], si[(r.industry, r.year)]] += r.share
    Ssum = S.sum(axis=1)
    for i, (_, t) in enumerate(okeys):
        S[i, si[("__missing__", t)]] = 1.0 - Ssum[i]
    W = np.column_stack([np.ones(len(okeys))] + [Ssum * (obs.year.values == t) for t in years])
    e = obs["pop"].values / obs["pop"].sum()
    s, bars, keep = oracles.shock_aggregates(S, np.column_stack([obs.emp, obs.imports]), W, e)
    gold = pd.read_csv(GOLDEN, float_precision="round_trip")
    order = [si[(i, p)] for i, p in zip(gold.shock_id, gold.period)]
    pos = {n: k for k, n in enumerate(keep)}
    rows = [pos[j] for j in order]
    np.testing.assert_allclose(gold.s_n, s[rows], rtol=1e-12)
    np.testing.assert_allclose(gold.ybar, bars[rows, 0], rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(gold.xbar, bars[rows, 1], rtol=1e-10, atol=1e-13)


def test_estimate_report_validates_against_schema(tmp_path):
    rep = run_json(tmp_path, ["estimate", *COMPLETE, "--inference", "cluster:cluster", "--lm-ci", "--akm"])
    jsonschema.validate(rep, schema("estimate"))
    assert rep["estimator"] == "JUST_ID"
    assert rep["akm"]["se"] > 0


def test_shock_level_input_reproduces_estimate(tmp_path):
    a = run_json(tmp_path, ["estimate", *COMPLETE, "--inference", "cluster:cluster"], "a.json")
    b = run_json(tmp_path, ["estimate", "--shock-level", str(GOLDEN), "--g", "g",
                            "--q", "const,observed_shock_t1990,observed_shock_t2000",
                            "--inference", "cluster:cluster"], "b.json")
    assert list(b["coefficients"].values()) == pytest.approx(list(a["coefficients"].values()), rel=1e-12)
    assert list(b["se"].values()) == pytest.approx(list(a["se"].values()), rel=1e-12)


def test_diagnose_report_validates(tmp_path):
    rep = run_json(tmp_path, ["diagnose", *COMPLETE, "--nesting", "sector", "--balance", "lag_growth"])
    jsonschema.validate(rep, schema("diagnose"))
    assert rep["rotemberg"]["sum_alpha"] == pytest.approx(1.0)
    assert "balance" in rep and "icc" in rep


def test_simulate_report_is_worker_invariant(tmp_path, monkeypatch):
    args = ["simulate", "--reps", "24", "--seed", "5", "--n-regions", "60", "--n-shocks", "30", "--naive"]
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(args + ["--workers", "1", "--json", str(a)]) == 0
    monkeypatch.setenv("SSIV_THREADS", "2")
    assert main(args + ["--workers", "4", "--json", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    jsonschema.validate(json.loads(a.read_text()), schema("simulate"))


def test_replay_reproduces_output(tmp_path):
    out = tmp_path / "est.json"
    assert main(["estimate", *COMPLETE, "--lm-ci", "--json", str(out)]) == 0
    first = out.read_bytes()
    out.unlink()
    assert main(["replay", str(tmp_path / "est.json.run.json")]) == 0
    assert out.read_bytes() == first


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "run.cfg"
    pairs = dict(zip(COMPLETE[0:-1:2], COMPLETE[1:-1:2]))
    lines = [f"{k.lstrip('-')} = {v}" for k, v in pairs.items()] + ["complete-shares = true", "# comment"]
    cfg.write_text("\n".join(lines) + "\n")
    a = run_json(tmp_path, ["estimate", "--config", str(cfg)], "a.json")
    b = run_json(tmp_path, ["estimate", *COMPLETE], "b.json")
    assert a == b
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense\n")
    assert main(["estimate", "--config", str(bad)]) == 2


def test_binscatter_output(tmp_path):
    bs = tmp_path / "bins.csv"
    rep = run_json(tmp_path, ["estimate", *COMPLETE, "--binscatter", "5", "--binscatter-out", str(bs)])
    frame = pd.read_csv(bs)
    # the heavy missing shock fills a whole bin's worth of weight, so one bin stays empty
    assert 1 <= len(frame) <= 5
    assert frame.s_weight.sum() == pytest.approx(1.0)
    assert rep["binscatter"]["ratio"] == pytest.approx(rep["coefficients"]["imports"], rel=1e-9)


def test_falsify_alias(tmp_path):
    a = run_json(tmp_path, ["falsify", *COMPLETE, "placebo"], "a.json")
    b = run_json(tmp_path, ["estimate", *COMPLETE, "--falsify", "placebo"], "b.json")
    assert a == b


def test_exit_codes(tmp_path, monkeypatch, capsys):
    # 2: incomplete shares without an override
    assert main(["estimate", *INPUTS]) == 2
    assert "incomplete" in capsys.readouterr().err
    # 2: missing inputs, argparse errors
    assert main(["estimate"]) == 2
    assert main(["estimate", "--bogus"]) == 2
    assert main(["estimate", *COMPLETE, "--inference", "hac:x"]) == 2

    def boom(ns):
        from ssiv.errors import EstimationError
        raise EstimationError("singular")
    monkeypatch.setattr(cli, "cmd_diagnose", boom)
    assert main(["diagnose", *COMPLETE]) == 1

    def crash(ns):
        raise RuntimeError("unexpected")
    monkeypatch.setattr(cli, "cmd_diagnose", crash)
    assert main(["diagnose", *COMPLETE]) == 3
    assert main(["--version"]) == 0


def test_weight_flag_overrides_schema(tmp_path):
    a = run_json(tmp_path, ["estimate", *COMPLETE], "a.json")
    args = [v if v != "y=emp;x=imports;w=;id=cz;period=year;weight=pop" else "y=emp;x=imports;w=;id=cz;period=year"
            for v in COMPLETE]
    b = run_json(tmp_path, ["estimate", *args, "--weight", "pop"], "b.json")
    assert a == b


def test_estimation_error_exit_code_from_data(tmp_path):
    obs = tmp_path / "o.csv"
    shares = tmp_path / "s.csv"
    shocks = tmp_path / "g.csv"
    obs.write_text("id,y,x\na,1,2\nb,2,3\nc,0,1\n")
    shares.write_text("obs,shock,share\na,n1,1\nb,n2,1\nc,n3,1\n")
    shocks.write_text("id,g\nn1,1\nn2,1\nn3,1\n")
    code = main(["estimate", "--obs", str(obs), "--shares", str(shares), "--shocks", str(shocks),
                 "--obs-schema", "y=y;x=x;id=id", "--share-schema", "obs=obs;shock=shock;share=share",
                 "--shock-schema", "id=id;g=g", "--unweighted"])
    assert code == 1
