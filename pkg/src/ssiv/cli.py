"""Command-line front end.

Subcommands: ``aggregate``, ``estimate``, ``diagnose``, ``simulate``,
``falsify`` (alias of ``estimate --falsify``) and ``replay``. Every run that
writes an output also writes a ``.run.json`` manifest from which it can be
replayed. Exit codes: 0 success, 1 estimation error, 2 input error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import load_shock_level, ssaggregate
from .data import complete_shares, load_bundle
from .diagnostics import (
    binscatter,
    concentration,
    icc_decompose,
    instrument_summary,
    rotemberg,
    shock_summary,
    balance_summary,
)
from .errors import SSIVError, ValidationError
from .estimate import akm_se, falsification_test, lm_confidence_interval, ssiv_estimate
from .montecarlo import (
    DgpSpec,
    SimulationDesign,
    make_synthetic_design,
    orthogonality_scaling,
    reweight_to_hhi,
    run_many_weak_study,
    run_rejection_study,
    run_subsample_study,
)

NOT_RECORDED = {"config", "manifest", "command"}


@dataclass
class RunConfig:
    """Serializable record of one invocation."""

    subcommand: str
    args: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self):
        return json.dumps({"subcommand": self.subcommand, "args": self.args, "version": self.version},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["subcommand"], d.get("args", {}), d.get("version", __version__))

    @classmethod
    def from_namespace(cls, ns):
        args = {k: v for k, v in vars(ns).items() if k not in NOT_RECORDED and v is not None}
        return cls(ns.command, args)

    def argv(self, parser):
        """Rebuild a command line for this config."""
        return [self.subcommand] + _to_argv(_subparser(parser, self.subcommand), self.args)


# ------------------------------------------------------------------ helpers

def _schema_map(text):
    """``"y=emp;x=a,b;period=year"`` -> dict."""
    if not text:
        return None
    out = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, val = part.partition("=")
        if not sep:
            raise ValidationError(f"schema entry {part!r} is not key=value")
        val = val.strip()
        out[key.strip()] = None if val.lower() in ("", "none") else val
    return out


def _list(text):
    if text is None:
        return None
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj):
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _emit(payload, path):
    text = _dump(payload)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_manifest(ns, primary):
    target = ns.manifest or (f"{primary}.run.json" if primary else None)
    if target:
        Path(target).write_text(RunConfig.from_namespace(ns).to_json(), encoding="utf-8")


def _bundle(ns):
    missing = [f"--{k}" for k in ("obs", "shares", "shocks") if not getattr(ns, k)]
    if missing:
        raise ValidationError(f"missing input(s): {', '.join(missing)}")
    obs_schema = _schema_map(ns.obs_schema)
    if ns.weight:
        obs_schema = {**(obs_schema or {}), "weight": ns.weight}
    b = load_bundle(ns.obs, ns.shares, ns.shocks, obs_schema,
                    _schema_map(ns.share_schema), _schema_map(ns.shock_schema),
                    unweighted=ns.unweighted, allow_oversized=ns.allow_oversized)
    if ns.complete_shares:
        b = complete_shares(b, ns.missing_value)
    return b


def _dataset(ns, extra=None):
    if getattr(ns, "shock_level", None):
        return None, load_shock_level(ns.shock_level, _list(ns.g), _list(ns.q), ns.cluster_col or "cluster")
    b = _bundle(ns)
    ds = ssaggregate(b, y=ns.y, x=_list(ns.x), controls=_list(ns.controls), extra=extra,
                     allow_incomplete=ns.allow_incomplete)
    return b, ds


# --------------------------------------------------------------- commands

def cmd_aggregate(ns):
    _, ds = _dataset(ns, extra=_list(ns.extra))
    ds.to_csv(ns.out)
    _write_manifest(ns, ns.out)
    print(f"wrote {ds.n} shocks to {ns.out}", file=sys.stderr)
    return 0


def cmd_estimate(ns):
    extra = [ns.falsify] if ns.falsify and not ns.shock_level else None
    bundle, ds = _dataset(ns, extra=extra)
    if ns.falsify:
        rep = falsification_test(ds, ns.falsify, form=ns.form, inference=ns.inference, level=ns.level)
        if ns.lm_ci:
            d2 = ds.with_outcome(ds.extra[ns.falsify], ns.falsify)
            rep.lm_ci = lm_confidence_interval(d2, ns.inference, ns.level, method=ns.lm_method)
    else:
        rep = ssiv_estimate(ds, ns.inference, method=ns.method, level=ns.level)
        if ns.lm_ci:
            rep.lm_ci = lm_confidence_interval(ds, ns.inference, ns.level, method=ns.lm_method)
            rep.notes.extend(rep.lm_ci.warnings)
    out = rep.to_dict()
    if ns.akm:
        if bundle is None:
            raise ValidationError("--akm needs observation-level inputs")
        a = akm_se(bundle, _list(ns.controls), ns.inference, y=ns.y)
        out["akm"] = {"coef": a["coef"], "se": a["se_akm"]}
    if ns.binscatter:
        bs = binscatter(ds, ns.binscatter)
        path = ns.binscatter_out or (str(Path(ns.json).with_suffix("")) + ".binscatter.csv"
                                     if ns.json else "binscatter.csv")
        bs.to_csv(path)
        out["binscatter"] = {"bins": int(ns.binscatter), "path": path, "slope_reduced_form": bs.slope_reduced,
                             "slope_first_stage": bs.slope_first, "ratio": bs.ratio}
    if ds.dropped:
        out["dropped_shocks"] = list(ds.dropped)
    _emit(out, ns.json)
    _write_manifest(ns, ns.json)
    return 0


def cmd_diagnose(ns):
    bundle, ds = _dataset(ns)
    out = {"n_shocks": ds.n, "concentration": concentration(ds, ns.cluster_col).to_dict()}
    out["shocks"] = {"raw": shock_summary(ds), "residualized": shock_summary(ds, residualize=True)}
    if bundle is not None:
        out["instrument"] = instrument_summary(bundle, _list(ns.controls))
    if ds.J == 1 and ds.K == 1:
        out["rotemberg"] = rotemberg(ds).to_dict(ns.top)
    if ns.nesting:
        out["icc"] = icc_decompose(ds, _list(ns.nesting)).to_dict()
    if ns.balance:
        if bundle is None:
            raise ValidationError("--balance needs observation-level inputs")
        out["balance"] = {}
        for col in _list(ns.balance):
            r = balance_summary(bundle, col, inference=ns.inference, y=ns.y, x=_list(ns.x),
                                controls=_list(ns.controls), allow_incomplete=ns.allow_incomplete)
            out["balance"][col] = {"coef": float(r.coef[0]), "se": float(r.se[0]),
                                   "pvalue": float(r.pvalues[0])}
    _emit(out, ns.json)
    _write_manifest(ns, ns.json)
    return 0


def _sim_design(ns):
    if ns.obs or ns.shares or ns.shocks:
        return SimulationDesign.from_bundle(_bundle(ns), _list(ns.controls))
    return make_synthetic_design(L=ns.n_regions, N=ns.n_shocks, shocks_per_region=ns.shocks_per_region,
                                 pi=ns.pi, loading=ns.loading, endogeneity=ns.endogeneity,
                                 seed=ns.design_seed)


def cmd_simulate(ns):
    design = _sim_design(ns)
    spec = DgpSpec(mode=ns.mode, reps=ns.reps, seed=ns.seed, rho=ns.rho, naive=ns.naive,
                   pi=None if ns.obs else ns.pi)
    out = {"study": ns.study, "seed": ns.seed, "reps": ns.reps, "mode": ns.mode}
    if ns.study == "rejection":
        out["reports"] = [run_rejection_study(spec, design, ns.design, ns.workers).to_dict()]
    elif ns.study == "manyweak":
        res = run_many_weak_study(spec, design, [int(j) for j in _list(ns.J)], study=ns.design,
                                  workers=ns.workers)
        out["reports"] = [r.to_dict() for r in res.values()]
    elif ns.study == "hhi":
        targets = [float(t) for t in _list(ns.targets)]
        reports = []
        for t in targets:
            b, alpha = reweight_to_hhi(design.bundle, t)
            r = run_rejection_study(spec, design.with_bundle(b), ns.design, ns.workers, label=f"hhi={t:g}")
            r.extra = {"target_hhi": t, "alpha": alpha}
            reports.append(r.to_dict())
        hh, sd, slope = orthogonality_scaling(design, [None] + targets, reps=min(ns.reps, 500), seed=ns.seed)
        out["reports"] = reports
        out["orthogonality_scaling"] = {"hhi": hh, "sd": sd, "loglog_slope": slope}
    else:
        if not ns.subsample:
            raise ValidationError("--subsample L' is required for the subsample study")
        out["reports"] = [run_subsample_study(spec, design, ns.subsample, ns.workers).to_dict()]
    _emit(out, ns.json)
    _write_manifest(ns, ns.json)
    return 0


def cmd_replay(ns, parser):
    cfg = RunConfig.from_json(Path(ns.manifest_path).read_text(encoding="utf-8"))
    return main(cfg.argv(parser))


# ----------------------------------------------------------------- parser

def _add_inputs(p, shock_level=True):
    g = p.add_argument_group("inputs")
    g.add_argument("--obs", help="observation CSV")
    g.add_argument("--shares", help="exposure share CSV (long format)")
    g.add_argument("--shocks", help="shock CSV")
    g.add_argument("--obs-schema", help='column map, e.g. "y=emp;x=imp;w=a,b;id=cz;period=year;weight=pop"')
    g.add_argument("--share-schema", help='column map, e.g. "obs=cz;shock=ind;share=s;period=year"')
    g.add_argument("--shock-schema", help='column map, e.g. "g=g;q=q1,q2;id=ind;period=year;cluster=sic3"')
    g.add_argument("--weight", help="observation weight column (overrides the schema)")
    g.add_argument("--unweighted", action="store_true", help="ignore the weight column (equal weights)")
    g.add_argument("--allow-oversized", action="store_true", help="clamp share rows summing slightly above 1")
    g.add_argument("--complete-shares", action="store_true", help="add the missing shock and its controls")
    g.add_argument("--missing-value", type=float, default=0.0, help="shock value of the missing shock")
    g.add_argument("--allow-incomplete", action="store_true", help="aggregate incomplete shares anyway")
    g.add_argument("--y", help="outcome column (default from schema)")
    g.add_argument("--x", help="treatment column(s), comma separated")
    g.add_argument("--controls", help="observation controls, comma separated (default: all)")
    if shock_level:
        g.add_argument("--shock-level", help="use a shock-level CSV written by `ssiv aggregate` instead")
        g.add_argument("--g", help="instrument column(s) in the shock-level CSV")
        g.add_argument("--q", help="shock control column(s) in the shock-level CSV")
    p.add_argument("--config", help="key = value file of default options")
    p.add_argument("--manifest", help="where to write the run manifest (default: <output>.run.json)")


def _add_estimate(p):
    p.add_argument("--inference", default="hc", help="hc | cluster:<col> | hac:<bandwidth>")
    p.add_argument("--cluster-col", help="cluster column name in a shock-level CSV")
    p.add_argument("--method", choices=["tsls", "liml", "gmm"], help="overidentified estimator")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--lm-ci", action="store_true", help="invert the null-imposed LM test")
    p.add_argument("--lm-method", choices=["grid", "analytic"], default="grid")
    p.add_argument("--akm", action="store_true", help="also report the share-projection SE")
    p.add_argument("--binscatter", type=int, metavar="K", help="write K s_n-weighted bins")
    p.add_argument("--binscatter-out", help="binned-scatter CSV path")
    p.add_argument("--form", choices=["iv", "reduced"], default="iv", help="falsification form")
    p.add_argument("--json", help="report path (default: stdout)")


def build_parser():
    parser = argparse.ArgumentParser(prog="ssiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ssiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="write the shock-level dataset")
    _add_inputs(p, shock_level=False)
    p.add_argument("--extra", help="extra observation columns to aggregate")
    p.add_argument("--out", required=True, help="shock-level CSV path")

    p = sub.add_parser("estimate", help="equivalent shock-level IV with exposure-robust inference")
    _add_inputs(p)
    _add_estimate(p)
    p.add_argument("--falsify", metavar="COL", help="placebo outcome column")

    p = sub.add_parser("falsify", help="alias of `estimate --falsify COL`")
    _add_inputs(p)
    _add_estimate(p)
    p.add_argument("falsify", metavar="COL", help="placebo outcome column")

    p = sub.add_parser("diagnose", help="concentration, Rotemberg weights, ICC and balance")
    _add_inputs(p)
    p.add_argument("--cluster-col", help="label for cluster-level concentration")
    p.add_argument("--inference", default="hc")
    p.add_argument("--nesting", help="ICC nesting labels, coarsest first, comma separated")
    p.add_argument("--balance", help="shock control columns to balance-test")
    p.add_argument("--top", type=int, default=10, help="Rotemberg weights to list")
    p.add_argument("--json", help="report path (default: stdout)")

    p = sub.add_parser("simulate", help="Monte Carlo studies")
    _add_inputs(p, shock_level=False)
    p.add_argument("--study", choices=["rejection", "manyweak", "hhi", "subsample"], default="rejection")
    p.add_argument("--design", choices=["ssiv", "shock_iv"], default="ssiv")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["normal", "wild", "cluster", "ar1"], default="normal")
    p.add_argument("--rho", type=float, default=0.5, help="cluster / AR(1) correlation")
    p.add_argument("--workers", type=int, default=1, help="worker processes (capped by SSIV_THREADS)")
    p.add_argument("--naive", action="store_true", help="also run observation-level HC tests")
    p.add_argument("--J", default="1,5,10,25,50", help="instrument counts for manyweak")
    p.add_argument("--targets", default="0.02,0.05,0.1", help="HHI targets for the hhi study")
    p.add_argument("--subsample", type=int, metavar="L", help="regions per replication")
    s = p.add_argument_group("synthetic design (used without data inputs)")
    s.add_argument("--n-regions", type=int, default=700)
    s.add_argument("--n-shocks", type=int, default=400)
    s.add_argument("--shocks-per-region", type=int, default=5)
    s.add_argument("--pi", type=float, default=1.0)
    s.add_argument("--loading", type=float, default=0.0, help="shock-level residual loading")
    s.add_argument("--endogeneity", type=float, default=0.0)
    s.add_argument("--design-seed", type=int, default=20240501)
    p.add_argument("--json", help="report path (default: stdout)")

    p = sub.add_parser("replay", help="re-run from a .run.json manifest")
    p.add_argument("manifest_path")
    return parser


def _subparser(parser, name):
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)


def _to_argv(sub, values):
    by_dest = {a.dest: a for a in sub._actions}
    pos, opt = [], []
    for key, val in values.items():
        dest = key.replace("-", "_")
        a = by_dest.get(dest)
        if a is None:
            raise ValidationError(f"unknown option {key!r}")
        if not a.option_strings:
            pos.append(str(val))
        elif isinstance(a, argparse._StoreTrueAction):
            if val is True or str(val).lower() in ("1", "true", "yes", "on"):
                opt.append(a.option_strings[0])
        else:
            opt += [a.option_strings[0], str(val)]
    return opt + pos


def _read_config(path):
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}: line {n} is not key = value")
        values[key.strip()] = val.strip()
    return values


def _expand_config(parser, argv):
    if not argv or argv[0] not in ("aggregate", "estimate", "falsify", "diagnose", "simulate"):
        return argv
    cfg = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif tok.startswith("--config="):
            cfg = tok.split("=", 1)[1]
    if cfg is None:
        return argv
    return [argv[0]] + _to_argv(_subparser(parser, argv[0]), _read_config(cfg)) + argv[1:]


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parser.parse_args(_expand_config(parser, argv))
    except SSIVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"aggregate": cmd_aggregate, "estimate": cmd_estimate, "falsify": cmd_estimate,
                "diagnose": cmd_diagnose, "simulate": cmd_simulate}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda m, *a, **k: print(f"warning: {m}", file=sys.stderr)
            if ns.command == "replay":
                return cmd_replay(ns, parser)
            return handlers[ns.command](ns)
    except SSIVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
