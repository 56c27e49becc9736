"""Shock-level aggregation: the exposure-weighted transform behind the
equivalent shock-level regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import CONST, FLOAT_FORMAT, PanelBundle, relabel_panel
from .errors import SchemaError, ValidationError
from .regress import Residualizer

IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class ShockLevelDataset:
    """Per-shock aggregates ``v̄_n = Σ e s v⊥ / s_n`` with attached shock data.

    Shocks with ``s_n = 0`` are excluded and listed in ``dropped``.
    """

    shock_id: np.ndarray
    s: np.ndarray
    ybar: np.ndarray
    xbar: np.ndarray
    g: np.ndarray
    q: np.ndarray
    zbar: np.ndarray | None = None
    period: np.ndarray | None = None
    cluster: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    dropped: tuple = ()
    complete: bool = True
    y_name: str = "y"
    x_names: tuple = ("x",)
    g_names: tuple = ("g",)
    q_names: tuple = (CONST,)
    cluster_name: str = "cluster"
    notes: tuple = ()

    @property
    def n(self):
        return len(self.s)

    @property
    def K(self):
        return self.xbar.shape[1]

    @property
    def J(self):
        return self.g.shape[1]

    @property
    def hhi(self):
        w = self.s / self.s.sum()
        return float(np.sum(w**2))

    def label(self, name):
        if name in ("cluster", self.cluster_name) and self.cluster is not None:
            return self.cluster
        if name in self.labels:
            return self.labels[name]
        if name == "period" and self.period is not None:
            return self.period
        if name == "shock_id":
            return self.shock_id
        raise SchemaError(f"unknown shock label {name!r}")

    def with_outcome(self, values, name="r"):
        from dataclasses import replace
        return replace(self, ybar=np.asarray(values, dtype=float).ravel(), y_name=name)

    def with_treatment(self, values, names):
        from dataclasses import replace
        v = np.asarray(values, dtype=float)
        return replace(self, xbar=v[:, None] if v.ndim == 1 else v, x_names=tuple(names))

    def to_frame(self):
        cols = {"shock_id": self.shock_id}
        if self.period is not None:
            cols["period"] = self.period
        cols["s_n"] = self.s
        cols["ybar"] = self.ybar
        for j in range(self.K):
            cols[f"xbar{j + 1}" if self.K > 1 else "xbar"] = self.xbar[:, j]
        if self.zbar is not None:
            for j in range(self.zbar.shape[1]):
                cols[f"zbar{j + 1}" if self.zbar.shape[1] > 1 else "zbar"] = self.zbar[:, j]
        for j, nm in enumerate(self.g_names):
            cols[nm] = self.g[:, j]
        for j, nm in enumerate(self.q_names):
            cols[nm] = self.q[:, j]
        if self.cluster is not None:
            cols["cluster"] = self.cluster
        for k, v in self.extra.items():
            cols[f"rbar_{k}"] = v
        return pd.DataFrame(cols)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


class ShareAggregator:
    """Reusable aggregation operator for one bundle and one control set.

    ``aggregate(V)`` residualizes observation-level columns on the chosen
    controls (e-weighted) and returns their shock-level averages over the
    shocks with positive exposure.
    """

    def __init__(self, bundle: PanelBundle, controls=None):
        obs = bundle.observations
        if controls is None:
            idx = list(range(obs.w.shape[1]))
        else:
            names = list(controls)
            missing = [c for c in names if c not in obs.w_names]
            if missing:
                raise SchemaError(f"unknown control column(s) {', '.join(missing)}")
            idx = [obs.w_names.index(c) for c in names]
            for j, nm in enumerate(obs.w_names):
                if nm == CONST or np.all(obs.w[:, j] == 1.0):
                    if j not in idx:
                        idx.append(j)
        self.control_names = [obs.w_names[j] for j in idx]
        self.W = obs.w[:, idx]
        self.e = obs.weight
        self.S = bundle.matrix
        self.St = self.S.T.tocsr()
        s_all = np.asarray(self.St @ self.e).ravel()
        self.keep = np.nonzero(s_all > 0)[0]
        self.s = s_all[self.keep]
        self.residualizer = Residualizer(self.W, self.e, self.control_names)

    def residualize(self, V):
        return self.residualizer(V)

    def average(self, Vperp):
        """Shock averages of already-residualized columns."""
        V = np.asarray(Vperp, dtype=float)
        V2 = V[:, None] if V.ndim == 1 else V
        num = np.asarray(self.St @ (self.e[:, None] * V2))[self.keep]
        out = num / self.s[:, None]
        return out[:, 0] if V.ndim == 1 else out

    def aggregate(self, V):
        return self.average(self.residualize(V))


def _column(obs, spec, what):
    if isinstance(spec, str):
        return obs.column(spec), spec
    arr = np.asarray(spec, dtype=float).ravel()
    if arr.shape[0] != obs.n:
        raise ValidationError(f"{what} has length {arr.shape[0]}, expected {obs.n}")
    return arr, what


def ssaggregate(bundle: PanelBundle, y=None, x=None, controls=None, extra=None,
                allow_incomplete=False, with_z=True) -> ShockLevelDataset:
    """Build the shock-level dataset.

    Parameters
    ----------
    bundle : PanelBundle
        Panels are relabeled into stacked cross-sectional form first.
    y : str or array_like, optional
        Outcome; defaults to the observation table's outcome.
    x : sequence of str, optional
        Treatments; defaults to all treatment columns.
    controls : sequence of str, optional
        Observation controls to residualize on; defaults to all of ``w``.
        The constant is always included.
    extra : mapping or sequence, optional
        Additional variables to aggregate (placebo outcomes etc.), either
        column names or a mapping from name to an (L,) array.
    allow_incomplete : bool
        Permit incomplete shares. The shock-level regression still estimates
        a constant, but the identity Σ s_n v̄_n⊥ = 0 no longer holds.
    with_z : bool
        Also aggregate the shift-share instruments ``z = S g``.
    """
    notes = []
    if bundle.incomplete:
        if not allow_incomplete:
            raise ValidationError(
                "shares are incomplete: run complete_shares (or add the share-sum control and "
                "pass allow_incomplete=True)")
        warnings.warn("incomplete shares: the shock-level constant is estimated but aggregates "
                      "are not mean-zero; omitting the share-sum control biases the estimator",
                      stacklevel=2)
        notes.append("incomplete shares override in effect")
    flat = relabel_panel(bundle)
    obs, sh = flat.observations, flat.shocks
    zero_rows = int(np.sum(flat.row_sums == 0))
    if zero_rows:
        warnings.warn(f"{zero_rows} observation(s) have no exposure; they enter residualization only",
                      stacklevel=2)
        notes.append(f"{zero_rows} unexposed observation(s) retained")

    agg = ShareAggregator(flat, controls)
    yv, yname = (obs.y, obs.y_name) if y is None else _column(obs, y, "y")
    if x is None:
        xv, xnames = obs.x, obs.x_names
    else:
        x = [x] if isinstance(x, str) else list(x)
        xv = np.column_stack([obs.column(c) for c in x])
        xnames = tuple(x)
    blocks = [yv[:, None], xv]
    if with_z:
        blocks.append(np.asarray(flat.matrix @ sh.g))
    extras = {}
    if extra is not None:
        items = extra.items() if isinstance(extra, dict) else [(c, c) for c in extra]
        for name, spec in items:
            extras[name] = _column(obs, spec, name)[0]
    blocks += [v[:, None] for v in extras.values()]
    V = np.column_stack(blocks)
    bars = agg.aggregate(V)

    K, J = xv.shape[1], sh.g.shape[1]
    keep = agg.keep
    if keep.size < sh.n:
        lost = [str(s) for s in np.asarray(sh.shock_id)[np.setdiff1d(np.arange(sh.n), keep)]]
        warnings.warn(f"{len(lost)} shock(s) with zero exposure dropped", stacklevel=2)
        notes.append(f"dropped {len(lost)} zero-exposure shock(s)")
    else:
        lost = []
    ybar = bars[:, 0]
    xbar = bars[:, 1:1 + K]
    pos = 1 + K
    zbar = None
    if with_z:
        zbar = bars[:, pos:pos + J]
        pos += J
    rbar = {name: bars[:, pos + i] for i, name in enumerate(extras)}

    labels = {k: np.asarray(v)[keep] for k, v in sh.labels.items()}
    shock_id = labels.pop("base_id", np.asarray(sh.shock_id)[keep])
    period = None
    if "period" in labels:
        period = labels.pop("period").astype(np.int64)
    elif sh.period is not None:
        period = np.asarray(sh.period)[keep]

    complete = not bundle.incomplete
    if complete:
        chk = agg.s @ bars
        scale = np.sqrt(agg.s @ bars**2) + 1e-300
        if np.any(np.abs(chk) > IDENTITY_TOL * np.maximum(scale, 1.0)):
            notes.append("warning: sum_n s_n v̄_n not zero to tolerance")
    return ShockLevelDataset(
        shock_id=np.asarray(shock_id, dtype=object), s=agg.s, ybar=ybar, xbar=xbar,
        g=np.asarray(sh.g)[keep], q=np.asarray(sh.q)[keep], zbar=zbar, period=period,
        cluster=None if sh.cluster is None else np.asarray(sh.cluster)[keep],
        extra=rbar, labels=labels, dropped=tuple(lost), complete=complete, y_name=yname,
        x_names=tuple(xnames), g_names=sh.g_names, q_names=sh.q_names,
        cluster_name=sh.cluster_name, notes=tuple(notes))


def load_shock_level(path, g=None, q=None, cluster="cluster"):
    """Read a CSV written by :meth:`ShockLevelDataset.to_csv`."""
    df = pd.read_csv(path, dtype={"shock_id": str, "cluster": str}, keep_default_na=False,
                     float_precision="round_trip")
    xcols = [c for c in df.columns if c == "xbar" or (c.startswith("xbar") and c[4:].isdigit())]
    zcols = [c for c in df.columns if c == "zbar" or (c.startswith("zbar") and c[4:].isdigit())]
    rcols = [c for c in df.columns if c.startswith("rbar_")]
    reserved = {"shock_id", "period", "s_n", "ybar", "cluster", *xcols, *zcols, *rcols}
    rest = [c for c in df.columns if c not in reserved]
    if g is None:
        g = [c for c in rest if c.startswith("g")][:1] or rest[:1]
    if q is None:
        q = [c for c in rest if c not in g]
    return ShockLevelDataset(
        shock_id=df["shock_id"].to_numpy(object), s=df["s_n"].to_numpy(float),
        ybar=df["ybar"].to_numpy(float), xbar=df[xcols].to_numpy(float),
        g=df[list(g)].to_numpy(float), q=df[list(q)].to_numpy(float),
        zbar=df[zcols].to_numpy(float) if zcols else None,
        period=df["period"].to_numpy(np.int64) if "period" in df else None,
        cluster=df[cluster].to_numpy(object) if cluster in df else None,
        extra={c[5:]: df[c].to_numpy(float) for c in rcols},
        x_names=tuple(xcols), g_names=tuple(g), q_names=tuple(q))
