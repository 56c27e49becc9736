"""Leave-one-out and conventional SSIV estimates for a Bartik-style design.

    python scripts/replicate_bartik.py /path/to/prepared

Layout: obs.csv (czone, year, outcome, treatment, weight, controls),
shares.csv (czone, year, industry, share), shocks.csv (industry, year, g),
contributions.csv (czone, year, industry, omega, value) holding the
estimation weights and region-level growth rates behind each shock, and
columns.json with keys y, x, weight and controls.
"""

import argparse
import json
from pathlib import Path

import pandas as pd

from ssiv.data import ExposureMatrix, ObservationTable, PanelBundle, ShockTable
from ssiv.diagnostics import Contributions, loo_build, loo_estimate


def bartik_estimates(root, weighted=True):
    root = Path(root)
    cols = json.loads((root / "columns.json").read_text())
    obs = pd.read_csv(root / "obs.csv")
    shares = pd.read_csv(root / "shares.csv")
    shocks = pd.read_csv(root / "shocks.csv")
    contrib = pd.read_csv(root / "contributions.csv")
    weight = obs[cols["weight"]].to_numpy(float) if weighted else None
    ob = ObservationTable.from_arrays(obs["czone"].astype(str), obs[cols["y"]], obs[cols["x"]],
                                      obs[cols["controls"]].to_numpy(float), weight, obs["year"].to_numpy(),
                                      w_names=cols["controls"])
    ex = ExposureMatrix.from_triplets(shares["czone"].astype(str), shares["industry"].astype(str),
                                      shares["share"].to_numpy(float), shares["year"].to_numpy())
    sh = ShockTable.from_arrays(shocks["industry"].astype(str), shocks["g"].to_numpy(float),
                                period=shocks["year"].to_numpy())
    b = PanelBundle(ob, ex, sh)
    c = Contributions.from_arrays(contrib["czone"].astype(str), contrib["industry"].astype(str),
                                  contrib["omega"], contrib["value"], contrib["year"])
    return loo_estimate(b, loo_build(b, c))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("prepared")
    args = ap.parse_args()
    for weighted in (True, False):
        out = bartik_estimates(args.prepared, weighted)
        tag = "weighted" if weighted else "unweighted"
        print(f"{tag:10s} LOO {out['coef_loo']:.3f}  full {out['coef_full']:.3f} ({out['se']:.3f})  H {out['H']:.2f}")


if __name__ == "__main__":
    main()
