"""Design diagnostics: concentration, Rotemberg weights, leave-one-out
instruments with the H heuristic, ICC decomposition and balance tests."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .aggregate import ShareAggregator, ShockLevelDataset, ssaggregate
from .data import MISSING_SHOCK, PanelBundle, ShockTable, _frozen, _keys, relabel_panel
from .errors import EstimationError, ReferentialError, ValidationError
from .estimate import EstimateReport, falsification_test, ssiv_estimate
from .regress import Residualizer, wdot

STOCHASTIC_TOL = 1e-9


# ------------------------------------------------------------ concentration

@dataclass(frozen=True)
class ConcentrationReport:
    hhi: float
    ess: float
    largest_weight: float
    n_shocks: int
    by_cluster: dict | None = None

    def to_dict(self):
        return {"hhi": self.hhi, "ess": self.ess, "largest_weight": self.largest_weight,
                "n_shocks": self.n_shocks, "by_cluster": self.by_cluster}


def _herfindahl(w):
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    h = float(np.sum(w**2))
    return h, 1.0 / h, float(w.max())


def concentration(ds, cluster_col=None) -> ConcentrationReport:
    """Herfindahl index of the normalized shock weights, its inverse
    (effective sample size) and the largest weight; optionally also at the
    cluster level with ``s_c = Σ_{n in c} s_n``."""
    s = ds.s if isinstance(ds, ShockLevelDataset) else np.asarray(ds, dtype=float)
    if s.size == 0 or s.sum() <= 0:
        raise ValidationError("concentration needs at least one shock with positive weight")
    h, ess, big = _herfindahl(s)
    by = None
    if cluster_col is not None:
        if isinstance(cluster_col, str) and isinstance(ds, ShockLevelDataset):
            labels = ds.label(cluster_col)
        else:
            labels = np.asarray(cluster_col)
            if labels.shape[0] != s.size:
                raise ValidationError(f"cluster labels have length {labels.shape[0]}, expected {s.size}")
        codes = np.unique(labels, return_inverse=True)[1]
        sc = np.bincount(codes, weights=s)
        hc, essc, bigc = _herfindahl(sc)
        by = {"column": cluster_col if isinstance(cluster_col, str) else None, "hhi": hc,
              "ess": essc, "largest_weight": bigc, "n_clusters": int(sc.size)}
    return ConcentrationReport(h, ess, big, int(s.size), by)


# ---------------------------------------------------------------- Rotemberg

@dataclass(frozen=True)
class RotembergReport:
    shock_id: np.ndarray
    alpha: np.ndarray
    beta_n: np.ndarray
    beta: float
    sum_alpha: float
    weighted_sum: float
    excluded: tuple = ()
    period: np.ndarray | None = None
    note: str = ("alpha_n is the leverage of shock n: d(xbar_n * beta)/d(ybar_n); "
                 "beta = sum_n alpha_n beta_n")

    def top(self, k=5):
        order = np.argsort(-np.abs(self.alpha), kind="stable")[:k]
        out = []
        for i in order:
            row = {"shock_id": str(self.shock_id[i])}
            if self.period is not None:
                row["period"] = int(self.period[i])
            row.update(alpha=float(self.alpha[i]),
                       beta_n=None if np.isnan(self.beta_n[i]) else float(self.beta_n[i]))
            out.append(row)
        return out

    def to_dict(self, k=10):
        return {"beta": self.beta, "sum_alpha": self.sum_alpha, "weighted_sum": self.weighted_sum,
                "n_excluded": len(self.excluded), "top": self.top(k), "note": self.note}


def rotemberg(ds: ShockLevelDataset, fit: EstimateReport | None = None) -> RotembergReport:
    """Shock-level Rotemberg weights ``α_n = s_n ĝ_n x̄_n / Σ s ĝ x̄``.

    ``ĝ`` is the instrument residualized on q (s-weighted), so that
    ``Σ α_n β̂_n`` reproduces the equivalent-regression estimate even with
    shock-level controls. Shocks with ``x̄_n = 0`` have α_n = 0 and are
    excluded from the β̂_n terms.
    """
    if ds.K != 1 or ds.J != 1:
        raise EstimationError("Rotemberg weights need a just-identified single-treatment fit")
    gh = Residualizer(ds.q, ds.s)(ds.g[:, 0])
    x = ds.xbar[:, 0]
    num = ds.s * gh * x
    den = float(np.sum(num))
    if den == 0:
        raise EstimationError("zero first stage: Rotemberg weights undefined")
    alpha = num / den
    zero = x == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        bn = np.where(zero, np.nan, ds.ybar / np.where(zero, 1.0, x))
    beta = float(fit.coef[0]) if fit is not None else float(np.sum(ds.s * gh * ds.ybar) / den)
    ws = float(np.sum(alpha[~zero] * bn[~zero]))
    return RotembergReport(ds.shock_id, alpha, bn, beta, float(alpha.sum()), ws,
                           tuple(str(s) for s in ds.shock_id[zero]), ds.period)


# ---------------------------------------------------------------------- LOO

@dataclass(frozen=True)
class Contributions:
    """Estimation-weight triplets: observation ``l`` contributes ``g_ln``
    with weight ``omega_ln`` to the estimate of shock ``n``."""

    obs_id: np.ndarray
    shock_id: np.ndarray
    omega: np.ndarray
    value: np.ndarray
    period: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, obs_id, shock_id, omega, value=None, period=None):
        omega = np.asarray(omega, dtype=float).ravel()
        value = np.zeros_like(omega) if value is None else np.asarray(value, dtype=float).ravel()
        if (omega < 0).any():
            raise ValidationError("estimation weights must be nonnegative")
        return cls(np.asarray(obs_id, dtype=object).astype(str).astype(object),
                   np.asarray(shock_id, dtype=object).astype(str).astype(object),
                   omega, value, None if period is None else np.asarray(period, dtype=np.int64))


@dataclass(frozen=True)
class LooInstrument:
    mode: str
    g_full: np.ndarray  # (N,) full-sample shock estimates
    g_loo: sp.csr_matrix  # (L, N) g_{n,-l} on the exposure pattern
    z: np.ndarray  # (L,) instrument for the chosen mode
    z_full: np.ndarray
    H_L: float
    H_N: float

    @property
    def H(self):
        return self.H_L / self.H_N


def _contribution_index(bundle, contrib):
    obs_keys = {k: i for i, k in enumerate(bundle.observations.keys)}
    sh_keys = {k: j for j, k in enumerate(bundle.shocks.keys)}
    keys_o = _keys(contrib.obs_id, contrib.period)
    keys_s = _keys(contrib.shock_id, contrib.period)
    rows, cols = [], []
    for t, (ko, ks) in enumerate(zip(keys_o, keys_s)):
        if ko not in obs_keys:
            raise ReferentialError(f"contribution row {t + 1} references unknown observation {ko[0]}")
        if ks not in sh_keys:
            raise ReferentialError(f"contribution row {t + 1} references unknown shock {ks[0]}")
        rows.append(obs_keys[ko])
        cols.append(sh_keys[ks])
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def loo_heuristic(bundle: PanelBundle, contrib: Contributions):
    """``H_L = Σ e s²``, ``H_N = Σ e s ω`` and ``H = H_L / H_N``."""
    e = bundle.observations.weight
    S = bundle.matrix
    H_L = float(np.sum(e * np.asarray(S.multiply(S).sum(axis=1)).ravel()))
    rows, cols = _contribution_index(bundle, contrib)
    sv = np.asarray(S[rows, cols]).ravel()
    H_N = float(np.sum(e[rows] * sv * contrib.omega))
    if H_N == 0:
        raise EstimationError("H_N = 0: no overlap between exposure and estimation weights")
    return H_L, H_N, H_L / H_N


def loo_build(bundle: PanelBundle, contrib: Contributions, mode="loo") -> LooInstrument:
    """Full-sample and leave-one-out shock estimates and instruments.

    ``g_n = Σ_l ω_ln g_ln``; ``g_{n,-l}`` drops observation l from both
    sums. Leave-one-out sums are assembled from prefix and suffix sums that
    never include the excluded term, so ``z_l^LOO`` does not depend on any
    ``g_ln`` of its own observation, not even through rounding.
    """
    if mode not in ("loo", "full"):
        raise ValidationError(f"unknown LOO mode {mode!r}")
    L, N = bundle.matrix.shape
    rows, cols = _contribution_index(bundle, contrib)
    om, val = contrib.omega, contrib.value
    tot = np.bincount(cols, weights=om, minlength=N)
    has = np.bincount(cols, minlength=N) > 0
    bad = np.nonzero(has & (np.abs(tot - 1.0) > STOCHASTIC_TOL))[0]
    if bad.size:
        raise ValidationError(f"estimation weights of shock {bundle.shocks.shock_id[bad[0]]} sum to "
                              f"{tot[bad[0]]!r}, not 1")
    g_full = np.asarray(bundle.shocks.g[:, 0], dtype=float).copy()
    g_full[has] = 0.0
    np.add.at(g_full, cols, om * val)

    # leave-one-out values per contribution via prefix/suffix sums
    pos = om > 0
    order = np.lexsort((rows, cols))
    loo_val = {}
    for n in np.unique(cols):
        idx = order[cols[order] == n]
        idx = idx[pos[idx]]
        if mode == "loo" and idx.size < 2 and idx.size > 0:
            raise EstimationError(f"shock {bundle.shocks.shock_id[n]} has a single contributing "
                                  "observation; its leave-one-out estimate is undefined")
        a = om[idx] * val[idx]
        b = om[idx]
        pa = np.concatenate([[0.0], np.cumsum(a)[:-1]])
        sa = np.concatenate([np.cumsum(a[::-1])[::-1][1:], [0.0]])
        pb = np.concatenate([[0.0], np.cumsum(b)[:-1]])
        sb = np.concatenate([np.cumsum(b[::-1])[::-1][1:], [0.0]])
        for k, i in enumerate(idx):
            loo_val[(rows[i], n)] = (pa[k] + sa[k]) / (pb[k] + sb[k])

    S = bundle.matrix.tocoo()
    gl = np.array([loo_val.get((i, j), g_full[j]) for i, j in zip(S.row, S.col)], dtype=float)
    g_loo = sp.csr_matrix((gl, (S.row, S.col)), shape=(L, N))
    z_full = np.asarray(bundle.matrix @ g_full).ravel()
    if mode == "loo":
        z = np.asarray(sp.csr_matrix((S.data * gl, (S.row, S.col)), shape=(L, N)).sum(axis=1)).ravel()
    else:
        z = z_full
    H_L, H_N, _ = loo_heuristic(bundle, contrib)
    return LooInstrument(mode, g_full, g_loo, z, z_full, H_L, H_N)


def loo_estimate(bundle: PanelBundle, loo: LooInstrument, controls=None, inference="hc"):
    """Observation-level IV with the LOO instrument, next to the full-sample
    equivalent-regression estimate.

    The reported SE is the non-LOO exposure-robust SE (the LOO estimator has
    no shock-level representation); the caveat is included in the output.
    """
    flat = relabel_panel(bundle)
    agg = ShareAggregator(flat, controls)
    obs = flat.observations
    V = agg.residualize(np.column_stack([obs.y, obs.x[:, 0], loo.z]))
    yp, xp, zp = V.T
    b_loo = float(wdot(zp, yp, obs.weight) / wdot(zp, xp, obs.weight))
    sh_full = replace(flat.shocks, g=_frozen(loo.g_full[:, None]))
    ds = ssaggregate(flat.replace_tables(shocks=sh_full), controls=controls)
    rep = ssiv_estimate(ds, inference)
    return {"coef_loo": b_loo, "coef_full": float(rep.coef[0]), "se": float(rep.se[0]),
            "H_L": loo.H_L, "H_N": loo.H_N, "H": loo.H,
            "caveat": "SE is the non-LOO exposure-robust SE"}


# ---------------------------------------------------------------------- ICC

@dataclass(frozen=True)
class IccReport:
    levels: tuple
    components: dict  # level -> variance component (None if not identified)
    shares: dict  # level -> ICC, including "residual"
    period_means: dict
    truncated: tuple = ()
    not_identified: tuple = ()
    estimator: str = "method-of-moments nested ANOVA"

    def to_dict(self):
        return {"estimator": self.estimator, "levels": list(self.levels),
                "components": self.components, "icc": self.shares,
                "period_means": {str(k): v for k, v in self.period_means.items()},
                "truncated": list(self.truncated), "not_identified": list(self.not_identified)}


def _shock_label(tab, name):
    if name in ("shock_id", "industry") and name not in getattr(tab, "labels", {}):
        return np.asarray(tab.shock_id)
    return np.asarray(tab.label(name))


def icc_decompose(shocks, nesting, instrument=0, weights=None) -> IccReport:
    """Nested variance components of period-demeaned shocks.

    Parameters
    ----------
    shocks : ShockTable or ShockLevelDataset
    nesting : sequence of str
        Label columns from coarsest to finest (``"shock_id"`` names the shock
        itself, e.g. an industry observed in several periods). Groups are
        nested by construction: a group at level k is the combination of
        labels at levels 1..k.
    instrument : int
        Which instrument column to decompose.
    weights : array_like, optional
        Weights for removing period means (e.g. ``s_n``); unweighted if None.
        The synthetic missing shock is always excluded.

    Returns
    -------
    IccReport
        Components solve E[SS_k] = Σ_j σ_j² (T_k(j) - T_{k-1}(j)) for the
        sequential between-group sums of squares. Negative components are
        truncated to zero and listed.
    """
    real = np.asarray(shocks.shock_id) != MISSING_SHOCK
    g = np.asarray(shocks.g[:, instrument], dtype=float)[real]
    N = g.size
    period = shocks.period
    if period is None and isinstance(shocks, ShockTable) and "period" in shocks.labels:
        period = shocks.labels["period"]
    if period is not None:
        period = np.asarray(period)[real]
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=float)[real]
    y = g.copy()
    means = {}
    if period is not None:
        for t in np.unique(period):
            mask = period == t
            mu = float(np.sum(w[mask] * g[mask]) / np.sum(w[mask]))
            means[t.item() if hasattr(t, "item") else t] = mu
            y[mask] -= mu
    else:
        means[None] = float(np.sum(w * g) / np.sum(w))
        y -= means[None]

    levels = list(nesting)
    codes = []
    acc = np.zeros(N, dtype=object)
    acc[:] = ""
    for name in levels:
        lab = _shock_label(shocks, name).astype(str)[real]
        acc = np.array([a + "\x1f" + b for a, b in zip(acc, lab)], dtype=object)
        codes.append(np.unique(acc, return_inverse=True)[1])
    m = len(levels)
    # level index 0 = grand, 1..m = label levels, m+1 = unit
    all_codes = [np.zeros(N, dtype=np.int64)] + codes + [np.arange(N)]

    def sizes(c):
        return np.bincount(c)

    def T(k, j):
        if j <= k:
            return float(N)
        # Σ_g Σ_{h⊂g} n_h² / n_g ; nested, so each fine group h has one parent
        ck, cj = all_codes[k], all_codes[j]
        nh = sizes(cj)
        parent = np.zeros(nh.size, dtype=np.int64)
        parent[cj] = ck
        ng = sizes(ck)
        return float(np.sum(nh**2 / ng[parent]))

    def means_of(c):
        return np.bincount(c, weights=y) / np.bincount(c)

    SS = np.empty(m + 1)
    for k in range(1, m + 2):
        mk = means_of(all_codes[k])[all_codes[k]]
        mp = means_of(all_codes[k - 1])[all_codes[k - 1]]
        SS[k - 1] = float(np.sum((mk - mp) ** 2))
    C = np.zeros((m + 1, m + 1))
    for k in range(1, m + 2):
        for j in range(1, m + 2):
            C[k - 1, j - 1] = T(k, j) - T(k - 1, j)

    ngroups = [int(all_codes[k].max()) + 1 for k in range(m + 2)]
    ident = [ngroups[k] > ngroups[k - 1] for k in range(1, m + 2)]
    names = levels + ["residual"]
    not_ident = tuple(names[i] for i in range(m + 1) if not ident[i])
    idx = [i for i in range(m + 1) if ident[i]]
    sol = np.full(m + 1, np.nan)
    if idx:
        sol[idx] = np.linalg.solve(C[np.ix_(idx, idx)], SS[idx])
    trunc = tuple(names[i] for i in idx if sol[i] < 0)
    comp = np.where(np.isnan(sol), 0.0, np.clip(sol, 0.0, None))
    total = comp.sum()
    shares = {n: (float(comp[i] / total) if total > 0 else 0.0) for i, n in enumerate(names)}
    for n in not_ident:
        shares[n] = None
    components = {n: (None if np.isnan(sol[i]) else float(comp[i])) for i, n in enumerate(names)}
    return IccReport(tuple(levels), components, shares, means, trunc, not_ident)


# ------------------------------------------------------------------ balance

def balance_summary(bundle: PanelBundle, r_n, form="iv", inference="hc", **aggregate_kwargs) -> EstimateReport:
    """Balance test of a shock-level covariate.

    Builds ``r_l = Σ_n s_ln r_n`` and runs :func:`falsification_test` on it.
    ``r_n`` is an (N,) array aligned with the shock table, or the name of a
    shock control column.
    """
    sh = bundle.shocks
    if isinstance(r_n, str):
        if r_n in sh.q_names:
            r = sh.q[:, sh.q_names.index(r_n)]
        elif r_n in sh.labels:
            # the missing shock's value is absorbed by its indicator control
            raw = np.where(np.asarray(sh.shock_id) == MISSING_SHOCK, "0", sh.labels[r_n])
            try:
                r = np.array([float(v) for v in raw])
            except ValueError:
                raise ValidationError(f"shock column {r_n!r} is not numeric") from None
        else:
            raise ValidationError(f"unknown shock column {r_n!r}")
    else:
        r = np.asarray(r_n, dtype=float).ravel()
    if r.shape[0] != sh.n:
        raise ValidationError(f"r_n has length {r.shape[0]}, expected {sh.n}")
    if not np.all(np.isfinite(r)):
        raise ValidationError("r_n must be defined for every shock")
    r_l = np.asarray(bundle.matrix @ r).ravel()
    return falsification_test(bundle, r_l, form=form, inference=inference, **aggregate_kwargs)


# --------------------------------------------------------------- binscatter

@dataclass
class Binscatter:
    bins: np.ndarray
    weight: np.ndarray
    g: np.ndarray
    ybar: np.ndarray
    xbar: np.ndarray
    slope_reduced: float
    slope_first: float

    @property
    def ratio(self):
        return self.slope_reduced / self.slope_first

    def to_csv(self, path):
        import pandas as pd
        pd.DataFrame({"bin": self.bins, "s_weight": self.weight, "g_resid": self.g,
                      "ybar_resid": self.ybar, "xbar_resid": self.xbar}).to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n")


def binscatter(ds: ShockLevelDataset, n_bins=20, instrument=0, treatment=0) -> Binscatter:
    """``s_n``-weighted binned scatter of shock-level residuals.

    ``g``, ``ȳ`` and ``x̄`` are residualized on the shock controls; shocks
    are sorted by residualized g and cut into bins of equal total weight.
    Slopes are the s-weighted regression slopes on the unbinned data, so the
    reduced-form / first-stage ratio equals the just-identified estimate.
    """
    if n_bins < 1:
        raise ValidationError("number of bins must be positive")
    R = Residualizer(ds.q, ds.s, ds.q_names)
    V = R(np.column_stack([ds.g[:, instrument], ds.ybar, ds.xbar[:, treatment]]))
    g, y, x = V.T
    s = ds.s / ds.s.sum()
    order = np.argsort(g, kind="stable")
    cum = np.cumsum(s[order])
    cut = np.minimum((cum - 0.5 * s[order]) * n_bins, n_bins - 1e-12).astype(int)
    idx = np.empty(ds.n, dtype=int)
    idx[order] = cut
    used = np.unique(idx)
    w = np.bincount(idx, weights=s, minlength=n_bins)[used]

    def mean(v):
        return np.bincount(idx, weights=s * v, minlength=n_bins)[used] / w

    gg = float(wdot(g, g, s))
    if gg <= 0:
        raise EstimationError("residualized instrument has no variation")
    return Binscatter(used + 1, w, mean(g), mean(y), mean(x),
                      float(wdot(g, y, s)) / gg, float(wdot(g, x, s)) / gg)


# ---------------------------------------------------------------- summaries

def _weighted_quantile(v, w, p):
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / w.sum()
    return float(v[order][min(np.searchsorted(cum, p, side="left"), v.size - 1)])


def weighted_summary(values, weights):
    """Weighted mean, SD (no dof correction) and interquartile range."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    w = w / w.sum()
    mu = float(np.sum(w * v))
    sd = float(np.sqrt(np.sum(w * (v - mu) ** 2)))
    iqr = _weighted_quantile(v, w, 0.75) - _weighted_quantile(v, w, 0.25)
    return {"mean": mu, "sd": sd, "iqr": iqr}


def instrument_summary(bundle: PanelBundle, controls=None, instrument=0):
    """e-weighted summary of the shift-share instrument, raw and residualized."""
    flat = relabel_panel(bundle)
    z = np.asarray(flat.matrix @ flat.shocks.g[:, instrument]).ravel()
    agg = ShareAggregator(flat, controls)
    e = flat.observations.weight
    return {"raw": weighted_summary(z, e), "residualized": weighted_summary(agg.residualize(z), e),
            "controls": agg.control_names}


def shock_summary(ds: ShockLevelDataset, instrument=0, residualize=False):
    """s_n-weighted summary of shocks, optionally residualized on q."""
    g = ds.g[:, instrument]
    if residualize:
        g = Residualizer(ds.q, ds.s, ds.q_names)(g)
    return weighted_summary(g, ds.s)
