"""Regenerate the small panel fixture shipped in src/ssiv/fixtures."""

from pathlib import Path

import numpy as np
import pandas as pd

OUT = Path(__file__).resolve().parents[1] / "src" / "ssiv" / "fixtures"


def main(seed=7, L=60, N=25, T=2):
    rng = np.random.default_rng(seed)
    groups = np.arange(N) % 6
    obs, shares, shocks = [], [], []
    for t in range(T):
        year = 1990 + 10 * t
        g = rng.normal(2.0 * t, 3.0, N) + 0.5 * rng.normal(size=6)[groups]
        for n in range(N):
            shocks.append({"industry": f"i{n:02d}", "year": year, "g": g[n],
                           "sic3": f"s{groups[n]}", "sector": f"m{groups[n] % 2}",
                           "lag_growth": rng.normal()})
        for l in range(L):
            k = rng.choice(N, size=4, replace=False)
            mfg = rng.uniform(0.1, 0.6)
            s = mfg * rng.dirichlet(np.ones(4))
            z = float(s @ g[k])
            x = 0.8 * z + rng.normal(scale=0.3)
            y = -0.5 * x + 0.3 * mfg + rng.normal(scale=0.5)
            obs.append({"cz": f"c{l:03d}", "year": year, "emp": y, "imports": x,
                        "mfg_share": mfg, "pop": rng.uniform(1, 5), "placebo": rng.normal()})
            for j, n in enumerate(k):
                shares.append({"cz": f"c{l:03d}", "year": year, "industry": f"i{n:02d}", "share": s[j]})
    fmt = "%.10g"
    pd.DataFrame(obs).to_csv(OUT / "obs.csv", index=False, float_format=fmt)
    pd.DataFrame(shares).to_csv(OUT / "shares.csv", index=False, float_format=fmt)
    pd.DataFrame(shocks).to_csv(OUT / "shocks.csv", index=False, float_format=fmt)


if __name__ == "__main__":
    main()
