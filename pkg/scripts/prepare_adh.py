"""Convert the public China-shock replication files into the CSV layout read by
replicate_adh.py and the data-contingent acceptance tests.

    python scripts/prepare_adh.py --location location.dta --shares shares.dta \
        --shocks shocks.dta --industries industries.dta --out prepared/

Stata and CSV inputs are both accepted. Column names default to those of
the public files; every role can be overridden (see --help).
"""

import argparse
import json
from pathlib import Path

import pandas as pd

BASELINE = ["l_sh_popedu_c", "l_sh_popfborn", "l_sh_empl_f", "l_sh_routine33", "l_task_outsource"]


def read(path):
    path = Path(path)
    return pd.read_stata(path) if path.suffix == ".dta" else pd.read_csv(path)


def _split(text):
    return [t for t in (text or "").split(",") if t]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--location", required=True, help="region-by-period file")
    ap.add_argument("--shares", required=True, help="long exposure shares")
    ap.add_argument("--shocks", required=True, help="industry-by-period shocks")
    ap.add_argument("--industries", help="industry crosswalk with SIC3 and sector")
    ap.add_argument("--out", required=True)
    ap.add_argument("--region", default="czone")
    ap.add_argument("--period", default="year")
    ap.add_argument("--industry", default="sic87dd")
    ap.add_argument("--share", default="ind_share")
    ap.add_argument("--y", default="d_sh_empl_mfg")
    ap.add_argument("--y-lag", required=True, help="pre-period outcome for the falsification columns")
    ap.add_argument("--x", default="d_tradeusch_pw")
    ap.add_argument("--weight", default="timepwt48")
    ap.add_argument("--mfg-start", default="l_shind_manuf_cbp")
    ap.add_argument("--baseline", default=",".join(BASELINE),
                    help="start-of-period controls; Census division dummies (reg_*) are added automatically")
    ap.add_argument("--sectors", default="", help="lagged 10-sector share columns in the location file")
    ap.add_argument("--g", default="g")
    ap.add_argument("--country-shocks", default="", help="per-country shock columns for the overidentified fit")
    ap.add_argument("--sic3", default="sic3")
    ap.add_argument("--sector", default="sector")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    loc = read(args.location)
    reg = sorted(c for c in loc.columns if c.startswith("reg_"))[1:]
    baseline = _split(args.baseline) + reg
    keep = [args.region, args.period, args.y, args.y_lag, args.x, args.weight, args.mfg_start] + baseline
    keep += _split(args.sectors)
    obs = loc[keep].rename(columns={args.region: "czone", args.period: "year"})
    obs.to_csv(out / "obs.csv", index=False, float_format="%.17g")

    sh = read(args.shares)[[args.region, args.period, args.industry, args.share]]
    sh.columns = ["czone", "year", "sic87dd", "share"]
    sh = sh[sh["share"] > 0]
    sh.to_csv(out / "shares.csv", index=False, float_format="%.17g")

    g = read(args.shocks)
    if args.industries:
        g = g.merge(read(args.industries), on=args.industry, how="left", validate="m:1")
    cols = [args.industry, args.period, args.g, args.sic3, args.sector] + _split(args.country_shocks)
    g = g[cols].rename(columns={args.industry: "sic87dd", args.period: "year", args.g: "g",
                                args.sic3: "sic3", args.sector: "sector"})
    g.to_csv(out / "shocks.csv", index=False, float_format="%.17g")

    roles = {"y": args.y, "y_lag": args.y_lag, "x": args.x, "weight": args.weight,
             "mfg_start": args.mfg_start, "baseline": baseline, "sectors": _split(args.sectors),
             "country_shocks": _split(args.country_shocks)}
    (out / "columns.json").write_text(json.dumps(roles, indent=2) + "\n")
    print(f"wrote {len(obs)} observations, {len(sh)} shares, {len(g)} shocks to {out}")


if __name__ == "__main__":
    main()
