"""Reproduce the China-shock tables from a directory prepared by prepare_adh.py.

    python scripts/replicate_adh.py /path/to/prepared [--json out.json]

The directory holds obs.csv (czone, year, outcome, treatment, weight and
controls), shares.csv (czone, year, sic87dd, share; manufacturing only),
shocks.csv (sic87dd, year, g, sic3, sector and per-country shocks) and
columns.json naming the roles of the observation columns.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from ssiv import (
    complete_shares,
    concentration,
    effective_f,
    lm_confidence_interval,
    overidentified_fit,
    ssaggregate,
    ssiv_estimate,
)
from ssiv.data import ExposureMatrix, ObservationTable, PanelBundle, ShockTable
from ssiv.diagnostics import instrument_summary

CLUSTER = "cluster:cluster"


def load_prepared(root):
    root = Path(root)
    cols = json.loads((root / "columns.json").read_text())
    obs = pd.read_csv(root / "obs.csv")
    shares = pd.read_csv(root / "shares.csv")
    shocks = pd.read_csv(root / "shocks.csv")
    return cols, obs, shares, shocks


def _period_dummies(period, prefix):
    ps = sorted(np.unique(period))
    return np.column_stack([(period == p).astype(float) for p in ps]), [f"{prefix}{p}" for p in ps]


def adh_dataset(cols, obs, shares, shocks, column, outcome=None, instruments=("g",)):
    """Bundle and shock-level dataset for one column of the main table.

    Column 1: baseline controls, period effects and the start-of-period
    manufacturing share, with the non-manufacturing remainder entering as a
    zero shock. Column 2 swaps in the lagged share sum S_l. Columns 3 and 5
    interact S_l with periods and control for period effects at the shock
    level; columns 4 and 6 add period-specific sector shares and
    sector-by-period shock controls. Columns 5 and 6 use the lagged outcome.
    """
    if outcome is None:
        outcome = cols["y_lag"] if column >= 5 else cols["y"]
    per_o = obs["year"].to_numpy()
    oid = obs["czone"].astype(str).to_numpy()
    ex = ExposureMatrix.from_triplets(shares["czone"].astype(str).to_numpy(),
                                      shares["sic87dd"].astype(str).to_numpy(),
                                      shares["share"].to_numpy(float), shares["year"].to_numpy())
    sums = shares.groupby(["czone", "year"])["share"].sum()
    S_l = np.array([sums.get((c, t), 0.0) for c, t in zip(obs["czone"], obs["year"])])
    W = [obs[cols["baseline"]].to_numpy(float)]
    names = list(cols["baseline"])
    D, dn = _period_dummies(per_o, "t")
    W.append(D[:, 1:])
    names += dn[1:]
    if column == 1:
        W.append(obs[[cols["mfg_start"]]].to_numpy(float))
        names.append(cols["mfg_start"])
    elif column == 2:
        W.append(S_l[:, None])
        names.append("share_sum")
    else:
        W.append(S_l[:, None] * D)
        names += [f"share_sum_{n}" for n in dn]
        if column in (4, 6):
            sec = obs[cols["sectors"]].to_numpy(float)
            for j in range(D.shape[1]):
                W.append(sec * D[:, [j]])
                names += [f"{c}_{dn[j]}" for c in cols["sectors"]]
    ob = ObservationTable.from_arrays(oid, obs[outcome].to_numpy(float), obs[cols["x"]].to_numpy(float),
                                      np.column_stack(W), obs[cols["weight"]].to_numpy(float), per_o,
                                      w_names=names)
    per_s = shocks["year"].to_numpy()
    Ds, dsn = _period_dummies(per_s, "t")
    if column in (1, 2):
        q, qn = None, None
    elif column in (3, 5):
        q, qn = Ds[:, 1:], dsn[1:]
    else:
        sec_ = shocks["sector"].astype(str).to_numpy()
        cells = sorted(set(zip(sec_, per_s)))[1:]
        q = np.column_stack([((sec_ == a) & (per_s == b)).astype(float) for a, b in cells])
        qn = [f"{a}_{b}" for a, b in cells]
    sh = ShockTable.from_arrays(shocks["sic87dd"].astype(str).to_numpy(),
                                shocks[list(instruments)].to_numpy(float), q, per_s,
                                shocks["sic3"].astype(str).to_numpy(), q_names=qn,
                                labels={"sector": shocks["sector"].astype(str).to_numpy()})
    b = PanelBundle(ob, ex, sh)
    if column == 1:
        b = complete_shares(b)
        ds = ssaggregate(b, controls=names)
        keep = [i for i, n in enumerate(ds.q_names) if not n.startswith("observed_shock")]
        return b, replace(ds, q=ds.q[:, keep], q_names=tuple(ds.q_names[i] for i in keep))
    return b, ssaggregate(b, allow_incomplete=True)


def table4(cols, obs, shares, shocks):
    rows = {}
    for c in range(1, 7):
        _, ds = adh_dataset(cols, obs, shares, shocks, c)
        rep = ssiv_estimate(ds, CLUSTER)
        rows[c] = {"coef": float(rep.coef[0]), "se": float(rep.se[0]), "F": rep.effective_f, "n_shocks": ds.n}
    return rows


def diagnostics(cols, obs, shares, shocks):
    _, ds1 = adh_dataset(cols, obs, shares, shocks, 1)
    b3, ds3 = adh_dataset(cols, obs, shares, shocks, 3)
    c1, c2 = concentration(ds1, "cluster"), concentration(ds3, "cluster")
    sds = [instrument_summary(b3, controls=[])["raw"]["sd"]]
    for c in (2, 3, 4):
        b, _ = adh_dataset(cols, obs, shares, shocks, c)
        keep = [n for n in b.observations.w_names
                if n.startswith("share_sum") or any(n.startswith(f"{s}_t") for s in cols["sectors"])]
        sds.append(instrument_summary(b, controls=keep)["residualized"]["sd"])
    return {"ess_with_missing": c1.ess, "ess": c2.ess, "ess_sic3": c2.by_cluster["ess"],
            "largest": c2.largest_weight, "largest_sic3": c2.by_cluster["largest_weight"],
            "instrument_sd": sds}


def lm_interval(cols, obs, shares, shocks):
    _, ds = adh_dataset(cols, obs, shares, shocks, 3)
    ci = lm_confidence_interval(ds, CLUSTER)
    return {"intervals": [list(i) for i in ci.intervals], "bounded": ci.bounded}


def overidentified(cols, obs, shares, shocks):
    _, ds = adh_dataset(cols, obs, shares, shocks, 3, instruments=tuple(cols["country_shocks"]))
    out = {}
    for m in ("tsls", "liml", "gmm"):
        rep = overidentified_fit(ds, m, CLUSTER)
        out[m] = {"coef": float(rep.coef[0]), "se": float(rep.se[0]), "overid": rep.overid}
    out["effective_f"] = effective_f(ds, CLUSTER)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("prepared")
    ap.add_argument("--json")
    args = ap.parse_args()
    data = load_prepared(args.prepared)
    out = {"table4": table4(*data), "diagnostics": diagnostics(*data),
           "lm_ci_column3": lm_interval(*data)}
    if data[0].get("country_shocks"):
        out["overidentified"] = overidentified(*data)
    for c, r in out["table4"].items():
        print(f"({c}) {r['coef']:7.3f} ({r['se']:.3f})  F = {r['F']:.2f}  shocks = {r['n_shocks']}")
    d = out["diagnostics"]
    print(f"1/HHI {d['ess_with_missing']:.1f} / {d['ess']:.1f} / {d['ess_sic3']:.1f}; largest "
          f"{d['largest']:.3f} / {d['largest_sic3']:.3f}; instrument SD "
          + " / ".join(f"{v:.2f}" for v in d["instrument_sd"]))
    print("null-imposed CI (column 3):", out["lm_ci_column3"]["intervals"])
    if "overidentified" in out:
        for m in ("tsls", "liml", "gmm"):
            r = out["overidentified"][m]
            print(f"{m:5s} {r['coef']:7.3f} ({r['se']:.3f})")
        o = out["overidentified"]["gmm"]["overid"]
        print(f"overid {o['stat']:.2f} [p = {o['pvalue']:.3f}], effective F {out['overidentified']['effective_f']:.2f}")
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2, default=float) + "\n")


if __name__ == "__main__":
    main()
