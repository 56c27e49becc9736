"""Many-weak-instrument study: bias and effective F as J grows.

    python scripts/run_many_weak.py --J 1 5 10 25 50 --reps 2000 --pi 1 10

Only the first of J shocks is relevant. For each first-stage strength π
prints median bias (percent of the simulated SD), median effective F and
the Wald rejection rate.
"""

import argparse

from ssiv.montecarlo import DgpSpec, make_synthetic_design, run_many_weak_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--J", type=int, nargs="+", default=[1, 5, 10, 25, 50])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--pi", type=float, nargs="+", default=[1.0])
    ap.add_argument("--endogeneity", type=float, default=0.8)
    ap.add_argument("--design", choices=["ssiv", "shock_iv"], default="ssiv")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    design = make_synthetic_design(endogeneity=args.endogeneity)
    print(f"{'pi':>5} {'J':>4} {'bias%':>8} {'F':>8} {'reject':>7}")
    for pi in args.pi:
        spec = DgpSpec(reps=args.reps, seed=args.seed, pi=pi)
        for J, r in run_many_weak_study(spec, design, args.J, study=args.design, workers=args.workers).items():
            print(f"{pi:5.1f} {J:4d} {r.median_bias_pct_sd:8.2f} {r.median_f:8.2f} {r.rejection_rate:7.3f}")


if __name__ == "__main__":
    main()
