"""Data model and CSV ingestion for shift-share designs.

Three tables describe a design: observations (outcome, treatments, controls,
importance weight), long-format exposure shares, and shocks (instruments,
shock-level controls, cluster labels). :class:`PanelBundle` binds them and
materializes the sparse exposure matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import (
    ConsistencyError,
    DuplicateKeyError,
    ParseError,
    ReferentialError,
    SchemaError,
    ValidationError,
)

CONST = "const"
MISSING_SHOCK = "__missing__"
OVERSIZE_TOL = 1e-9
ROUNDING_TOL = 1e-12  # row-sum excess left untouched
INCOMPLETE_TOL = 1e-6
PANEL_SEP = "|"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _ids(a):
    return _frozen([str(v) for v in np.asarray(a, dtype=object).ravel()], dtype=object)


def _periods(a):
    if a is None:
        return None
    a = np.asarray(a)
    if a.dtype.kind == "f":
        if not np.all(a == np.round(a)):
            raise ParseError("period values must be integers")
    return _frozen(a, dtype=np.int64)


def _matrix(a, n, what):
    if a is None:
        return _frozen(np.zeros((n, 0)))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != n:
        raise ValidationError(f"{what} has {a.shape[0]} rows, expected {n}")
    return _frozen(a)


def _names(names, k, prefix):
    if names is None:
        return tuple(f"{prefix}{j + 1}" for j in range(k)) if k > 1 else ((prefix,) if k == 1 else ())
    names = tuple(str(s) for s in names)
    if len(names) != k:
        raise ValidationError(f"expected {k} names for {prefix}, got {len(names)}")
    return names


def _has_constant(M):
    return [j for j in range(M.shape[1]) if np.all(M[:, j] == 1.0)]


def _keys(ids, periods):
    if periods is None:
        return list(zip(ids.tolist(), [None] * len(ids)))
    return list(zip(ids.tolist(), periods.tolist()))


def _check_unique(keys, what):
    seen = set()
    for i, k in enumerate(keys):
        if k in seen:
            label = k[0] if k[1] is None else f"{k[0]} (period {k[1]})"
            raise DuplicateKeyError(f"duplicate {what} key {label} in row {i + 1}")
        seen.add(k)


@dataclass(frozen=True)
class ObservationTable:
    """Observation-level data. Weights are normalized to sum to one."""

    obs_id: np.ndarray
    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    weight: np.ndarray
    period: np.ndarray | None = None
    y_name: str = "y"
    x_names: tuple = ("x",)
    w_names: tuple = (CONST,)
    extra: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, obs_id, y, x, w=None, weight=None, period=None, *, y_name="y",
                    x_names=None, w_names=None, extra=None, labels=None):
        obs_id = _ids(obs_id)
        L = len(obs_id)
        y = _frozen(np.asarray(y, dtype=float).ravel())
        if y.shape[0] != L:
            raise ValidationError("outcome length does not match obs_id")
        x = _matrix(x, L, "treatments")
        if x.shape[1] < 1:
            raise ValidationError("at least one treatment is required")
        w = _matrix(w, L, "controls")
        w_names = _names(w_names, w.shape[1], "w")
        if not _has_constant(w):
            w = _frozen(np.column_stack([w, np.ones(L)]))
            w_names = w_names + (CONST,)
        if weight is None:
            weight = np.full(L, 1.0 / L)
        weight = np.asarray(weight, dtype=float).ravel()
        if weight.shape[0] != L:
            raise ValidationError("weight length does not match obs_id")
        bad = np.nonzero(~(weight > 0))[0]
        if bad.size:
            raise ValidationError(f"nonpositive weight {weight[bad[0]]!r} in row {bad[0] + 1}")
        weight = _frozen(weight / weight.sum())
        for name, arr in (("outcome", y), ("treatments", x), ("controls", w)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite value in {name}")
        period = _periods(period)
        extra = {k: _frozen(np.asarray(v, dtype=float).ravel()) for k, v in (extra or {}).items()}
        labels = {k: _ids(v) for k, v in (labels or {}).items()}
        tab = cls(obs_id, y, x, w, weight, period, str(y_name), _names(x_names, x.shape[1], "x"),
                  w_names, extra, labels)
        _check_unique(tab.keys, "observation")
        return tab

    @property
    def n(self):
        return len(self.obs_id)

    @property
    def keys(self):
        return _keys(self.obs_id, self.period)

    def column(self, name):
        """Look up any numeric column by name."""
        if name == self.y_name:
            return self.y
        if name in self.x_names:
            return self.x[:, self.x_names.index(name)]
        if name in self.w_names:
            return self.w[:, self.w_names.index(name)]
        if name in self.extra:
            return self.extra[name]
        raise SchemaError(f"unknown observation column {name!r}")

    def with_controls(self, columns, names):
        columns = _matrix(columns, self.n, "controls")
        return replace(self, w=_frozen(np.column_stack([self.w, columns])),
                       w_names=self.w_names + tuple(names))

    def with_period_indicators(self):
        if self.period is None:
            return self
        ts = np.unique(self.period)
        cols = np.column_stack([(self.period == t).astype(float) for t in ts])
        return self.with_controls(cols, [f"period_{t}" for t in ts])


@dataclass(frozen=True)
class ExposureMatrix:
    """Long-format exposure shares ``s_ln``."""

    obs_id: np.ndarray
    shock_id: np.ndarray
    share: np.ndarray
    period: np.ndarray | None = None

    @classmethod
    def from_triplets(cls, obs_id, shock_id, share, period=None, *, allow_oversized=False):
        obs_id, shock_id = _ids(obs_id), _ids(shock_id)
        share = np.asarray(share, dtype=float).ravel()
        if not (len(obs_id) == len(shock_id) == len(share)):
            raise ValidationError("share triplet columns differ in length")
        if not np.all(np.isfinite(share)):
            i = int(np.nonzero(~np.isfinite(share))[0][0])
            raise ValidationError(f"non-finite share in row {i + 1}")
        neg = np.nonzero(share < 0)[0]
        if neg.size:
            raise ValidationError(f"negative share {share[neg[0]]!r} in row {neg[0] + 1}")
        period = _periods(period)
        trip = (list(zip(obs_id.tolist(), shock_id.tolist(), period.tolist())) if period is not None
                else list(zip(obs_id.tolist(), shock_id.tolist())))
        seen = set()
        for i, k in enumerate(trip):
            if k in seen:
                raise DuplicateKeyError(f"duplicate share key {k} in row {i + 1}")
            seen.add(k)
        # row sums: rescale small excess, reject larger excess
        okeys = _keys(obs_id, period)
        codes, inv = np.unique(np.array([repr(k) for k in okeys], dtype=object), return_inverse=True)
        sums = np.bincount(inv, weights=share, minlength=len(codes))
        over = sums > 1.0 + ROUNDING_TOL
        if over.any() and not allow_oversized:
            big = sums > 1.0 + OVERSIZE_TOL
            if big.any():
                j = int(np.nonzero(big)[0][0])
                raise ValidationError(f"shares of observation {codes[j]} sum to {sums[j]!r} > 1")
            share = share / np.where(over, sums, 1.0)[inv]
        return cls(obs_id, shock_id, _frozen(share), period)

    @property
    def n(self):
        return len(self.share)

    def row_sums(self):
        """Mapping (obs_id, period) -> S_l over the observations that appear."""
        out = {}
        for k, s in zip(_keys(self.obs_id, self.period), self.share.tolist()):
            out[k] = out.get(k, 0.0) + s
        return out

    @property
    def incomplete(self):
        sums = np.array(list(self.row_sums().values()))
        return bool(sums.size and np.max(np.abs(sums - 1.0)) > INCOMPLETE_TOL)

    def summary(self):
        sums = np.array(list(self.row_sums().values()))
        return {
            "n_triplets": self.n,
            "n_observations": int(sums.size),
            "min_row_sum": float(sums.min()) if sums.size else None,
            "max_row_sum": float(sums.max()) if sums.size else None,
            "incomplete": self.incomplete,
        }


@dataclass(frozen=True)
class ShockTable:
    """Shock-level instruments ``g`` (N, J), controls ``q`` (N, P) and labels."""

    shock_id: np.ndarray
    g: np.ndarray
    q: np.ndarray
    period: np.ndarray | None = None
    cluster: np.ndarray | None = None
    g_names: tuple = ("g",)
    q_names: tuple = (CONST,)
    labels: dict = field(default_factory=dict)
    cluster_name: str = "cluster"

    @classmethod
    def from_arrays(cls, shock_id, g, q=None, period=None, cluster=None, *, g_names=None,
                    q_names=None, labels=None, cluster_name="cluster"):
        shock_id = _ids(shock_id)
        N = len(shock_id)
        g = _matrix(g, N, "instruments")
        if g.shape[1] < 1:
            raise ValidationError("at least one instrument is required")
        q = _matrix(q, N, "shock controls")
        q_names = _names(q_names, q.shape[1], "q")
        if not _has_constant(q):
            q = _frozen(np.column_stack([q, np.ones(N)]))
            q_names = q_names + (CONST,)
        for name, arr in (("instruments", g), ("shock controls", q)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite value in {name}")
        cluster = None if cluster is None else _ids(cluster)
        labels = {k: _ids(v) for k, v in (labels or {}).items()}
        tab = cls(shock_id, g, q, _periods(period), cluster, _names(g_names, g.shape[1], "g"),
                  q_names, labels, str(cluster_name))
        _check_unique(tab.keys, "shock")
        return tab

    @property
    def n(self):
        return len(self.shock_id)

    @property
    def keys(self):
        return _keys(self.shock_id, self.period)

    def label(self, name):
        if self.cluster is not None and name in ("cluster", self.cluster_name):
            return self.cluster
        if name in self.labels:
            return self.labels[name]
        if name == "period" and self.period is not None:
            return _ids(self.period)
        if name in self.q_names:
            return _ids(self.q[:, self.q_names.index(name)])
        raise SchemaError(f"unknown shock label column {name!r}")

    def with_controls(self, columns, names):
        columns = _matrix(columns, self.n, "shock controls")
        return replace(self, q=_frozen(np.column_stack([self.q, columns])),
                       q_names=self.q_names + tuple(names))

    def with_period_indicators(self):
        if self.period is None:
            return self
        ts = np.unique(self.period)
        cols = np.column_stack([(self.period == t).astype(float) for t in ts])
        return self.with_controls(cols, [f"period_{t}" for t in ts])


@dataclass(frozen=True)
class PanelBundle:
    """Bound observation, exposure and shock tables.

    Linking keys are ``(id, period)``, so in panels only same-period pairs are
    connected. ``matrix`` is the (L, N) sparse share matrix in table row order.
    """

    observations: ObservationTable
    exposures: ExposureMatrix
    shocks: ShockTable
    matrix: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        obs, ex, sh = self.observations, self.exposures, self.shocks
        flags = {obs.period is None, ex.period is None, sh.period is None}
        if len(flags) > 1:
            which = [name for name, t in (("observations", obs), ("shares", ex), ("shocks", sh))
                     if t.period is not None]
            raise ConsistencyError(f"period column present only in {', '.join(which)}")
        orow = {k: i for i, k in enumerate(obs.keys)}
        scol = {k: j for j, k in enumerate(sh.keys)}
        pers = ex.period.tolist() if ex.period is not None else [None] * ex.n
        rows = np.empty(ex.n, dtype=np.int64)
        cols = np.empty(ex.n, dtype=np.int64)
        for t, (o, s, p) in enumerate(zip(ex.obs_id.tolist(), ex.shock_id.tolist(), pers)):
            i = orow.get((o, p))
            if i is None:
                where = o if p is None else f"{o} (period {p})"
                raise ReferentialError(f"share row {t + 1} references unknown observation {where}")
            j = scol.get((s, p))
            if j is None:
                where = s if p is None else f"{s} (period {p})"
                raise ReferentialError(f"share row {t + 1} references shock {where} missing from the shock table")
            rows[t], cols[t] = i, j
        M = sp.csr_matrix((np.asarray(ex.share, float), (rows, cols)), shape=(obs.n, sh.n))
        M.sort_indices()
        object.__setattr__(self, "matrix", M)

    @property
    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def shock_weights(self):
        """``s_n = sum_l e_l s_ln``."""
        return np.asarray(self.matrix.T @ self.observations.weight).ravel()

    @property
    def incomplete(self):
        return bool(np.max(np.abs(self.row_sums - 1.0)) > INCOMPLETE_TOL)

    @property
    def period_count(self):
        p = self.observations.period
        return 1 if p is None else int(np.unique(p).size)

    def replace_tables(self, observations=None, exposures=None, shocks=None):
        return PanelBundle(observations or self.observations, exposures or self.exposures,
                           shocks or self.shocks)


def bundle_from_dense(S, y, x, g, *, w=None, q=None, weight=None, obs_period=None,
                      shock_period=None, cluster=None, obs_ids=None, shock_ids=None, **names):
    """Build a bundle from a dense (L, N) share matrix. Zero shares are skipped."""
    S = np.asarray(S, dtype=float)
    L, N = S.shape
    obs_ids = [f"o{i}" for i in range(L)] if obs_ids is None else list(obs_ids)
    shock_ids = [f"n{j}" for j in range(N)] if shock_ids is None else list(shock_ids)
    obs = ObservationTable.from_arrays(obs_ids, y, x, w, weight, obs_period,
                                       x_names=names.get("x_names"), w_names=names.get("w_names"))
    sh = ShockTable.from_arrays(shock_ids, g, q, shock_period, cluster,
                                g_names=names.get("g_names"), q_names=names.get("q_names"))
    ii, jj = np.nonzero(S)
    per = None
    if obs_period is not None:
        op = np.asarray(obs_period)[ii]
        sp_ = np.asarray(shock_period)[jj]
        if np.any(op != sp_):
            raise ConsistencyError("dense shares link observations and shocks in different periods")
        per = op
    ex = ExposureMatrix.from_triplets(np.asarray(obs_ids, dtype=object)[ii],
                                      np.asarray(shock_ids, dtype=object)[jj], S[ii, jj], per,
                                      allow_oversized=names.get("allow_oversized", False))
    return PanelBundle(obs, ex, sh)


def relabel_panel(bundle: PanelBundle) -> PanelBundle:
    """Stack a panel into cross-sectional form.

    Observation ``(l, t)`` becomes id ``"l|t"`` and shock ``(n, t)`` becomes
    ``"n|t"``; only same-period exposure links exist. Original ids and periods
    are kept as labels ``base_id`` and ``period``. Single-period input (or
    input without periods) is returned unchanged.
    """
    obs, ex, sh = bundle.observations, bundle.exposures, bundle.shocks
    if obs.period is None or bundle.period_count <= 1:
        return bundle

    def stack(ids, per):
        return np.array([f"{i}{PANEL_SEP}{t}" for i, t in zip(ids.tolist(), per.tolist())], dtype=object)

    new_obs = replace(obs, obs_id=_frozen(stack(obs.obs_id, obs.period), object), period=None,
                      labels={**obs.labels, "base_id": obs.obs_id, "period": _ids(obs.period)})
    new_sh = replace(sh, shock_id=_frozen(stack(sh.shock_id, sh.period), object), period=None,
                     labels={**sh.labels, "base_id": sh.shock_id, "period": _ids(sh.period)})
    new_ex = ExposureMatrix(_frozen(stack(ex.obs_id, ex.period), object),
                            _frozen(stack(ex.shock_id, ex.period), object), ex.share, None)
    return PanelBundle(new_obs, new_ex, new_sh)


def exposure_weighted(bundle: PanelBundle, values):
    """``sum_n s_ln v_n`` for shock-level values (N,) or (N, k)."""
    return bundle.matrix @ np.asarray(values, dtype=float)


def add_exposure_weighted_controls(bundle: PanelBundle, q_names) -> PanelBundle:
    """Append ``sum_n s_ln q_n`` to ``w`` for the named shock controls."""
    sh = bundle.shocks
    idx = [sh.q_names.index(n) for n in q_names]
    cols = exposure_weighted(bundle, sh.q[:, idx])
    obs = bundle.observations.with_controls(cols, [f"sw_{n}" for n in q_names])
    return bundle.replace_tables(observations=obs)


def complete_shares(bundle: PanelBundle, missing_shock_value: float = 0.0) -> PanelBundle:
    """Add a synthetic shock per period absorbing the missing share mass.

    The shock ``__missing__`` gets ``g = missing_shock_value`` and share
    ``1 - S_l``. Shock controls gain the indicator of a real shock (interacted
    with periods in panels); observation controls gain ``S_l`` (interacted
    with period indicators in panels).
    """
    if not bundle.incomplete:
        warnings.warn("shares are already complete; complete_shares is a no-op", stacklevel=2)
        return bundle
    obs, ex, sh = bundle.observations, bundle.exposures, bundle.shocks
    S = bundle.row_sums
    periods = [None] if obs.period is None else sorted(np.unique(obs.period).tolist())
    panel = len(periods) > 1

    # observation side
    if panel:
        cols = np.column_stack([S * (obs.period == t) for t in periods])
        wnames = [f"share_sum_t{t}" for t in periods]
    else:
        cols, wnames = S[:, None], ["share_sum"]
    new_obs = obs.with_controls(cols, wnames)

    # shock side
    P0 = sh.q.shape[1]
    consts = _has_constant(sh.q)
    J = sh.g.shape[1]
    n_new = len(periods)
    q_missing = np.zeros((n_new, P0))
    q_missing[:, consts] = 1.0
    q_all = np.vstack([sh.q, q_missing])
    if panel:
        per_all = np.concatenate([sh.period, np.array(periods)])
        real = np.r_[np.ones(sh.n), np.zeros(n_new)]
        ind = np.column_stack([real * (per_all == t) for t in periods])
        qnames = sh.q_names + tuple(f"observed_shock_t{t}" for t in periods)
    else:
        per_all = None if sh.period is None else np.concatenate([sh.period, np.array(periods)])
        ind = np.r_[np.ones(sh.n), np.zeros(n_new)][:, None]
        qnames = sh.q_names + ("observed_shock",)
    labels = {k: np.concatenate([v, np.array([MISSING_SHOCK] * n_new, dtype=object)])
              for k, v in sh.labels.items()}
    cluster = None if sh.cluster is None else np.concatenate(
        [sh.cluster, np.array([MISSING_SHOCK] * n_new, dtype=object)])
    new_sh = ShockTable.from_arrays(
        np.concatenate([sh.shock_id, np.array([MISSING_SHOCK] * n_new, dtype=object)]),
        np.vstack([sh.g, np.full((n_new, J), float(missing_shock_value))]),
        np.column_stack([q_all, ind]), per_all, cluster,
        g_names=sh.g_names, q_names=qnames, labels=labels, cluster_name=sh.cluster_name)

    # exposure side
    rest = 1.0 - S
    add = np.nonzero(rest > 0)[0]
    ex_per = None
    if ex.period is not None:
        ex_per = np.concatenate([ex.period, obs.period[add]])
    new_ex = ExposureMatrix.from_triplets(
        np.concatenate([ex.obs_id, obs.obs_id[add]]),
        np.concatenate([ex.shock_id, np.array([MISSING_SHOCK] * add.size, dtype=object)]),
        np.concatenate([ex.share, rest[add]]), ex_per, allow_oversized=True)
    return PanelBundle(new_obs, new_ex, new_sh)


# ---------------------------------------------------------------- CSV I/O

@dataclass(frozen=True)
class ObsSchema:
    y: str = "y"
    x: tuple = ("x",)
    w: tuple = ()
    id: str = "obs_id"
    period: str | None = None
    weight: str | None = "weight"


@dataclass(frozen=True)
class ShareSchema:
    obs: str = "obs_id"
    shock: str = "shock_id"
    share: str = "share"
    period: str | None = None


@dataclass(frozen=True)
class ShockSchema:
    g: tuple = ("g",)
    q: tuple = ()
    id: str = "shock_id"
    period: str | None = None
    cluster: str | None = None


def _schema(cls, schema):
    if schema is None:
        return cls()
    if isinstance(schema, cls):
        return schema
    kw = {}
    for k, v in dict(schema).items():
        default = getattr(cls(), k, None)
        if not hasattr(cls(), k):
            raise SchemaError(f"unknown {cls.__name__} field {k!r}")
        if isinstance(default, tuple) and isinstance(v, str):
            v = tuple(s.strip() for s in v.split(",") if s.strip())
        elif isinstance(default, tuple):
            v = () if v is None else tuple(v)
        kw[k] = v
    return cls(**kw)


def _read(path):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise SchemaError(f"file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path}: empty file or missing header") from exc
    df.columns = [c.strip() for c in df.columns]
    return df


def _require(df, cols, path):
    missing = [c for c in cols if c is not None and c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")


def _parse_float(text):
    try:
        return float(text)
    except ValueError:
        return np.nan


def _numeric(df, col, path):
    # float() is correctly rounded, so written values read back bit-identically
    vals = np.array([_parse_float(v) for v in df[col].str.strip()], dtype=float)
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        i = int(bad[0])
        raise ParseError(f"{path}: non-numeric value {df[col].iloc[i]!r} in column {col!r}, row {i + 1}")
    return vals


def _period_col(df, col, path):
    if col is None:
        return None
    vals = _numeric(df, col, path)
    if not np.all(vals == np.round(vals)):
        i = int(np.nonzero(vals != np.round(vals))[0][0])
        raise ParseError(f"{path}: non-integer period in row {i + 1}")
    return vals.astype(np.int64)


def load_observations(path, schema=None, unweighted=False) -> ObservationTable:
    """Load an observation CSV.

    Columns not named by the schema are carried as numeric ``extra`` columns
    when they parse as numbers.
    """
    sc = _schema(ObsSchema, schema)
    df = _read(path)
    weight_col = None if unweighted else sc.weight
    _require(df, [sc.id, sc.y, *sc.x, *sc.w, sc.period, weight_col], path)
    if not sc.x:
        raise SchemaError("at least one treatment column is required")
    used = {sc.id, sc.y, *sc.x, *sc.w, sc.period, sc.weight}
    extra = {}
    for c in df.columns:
        if c in used:
            continue
        v = np.array([_parse_float(t) for t in df[c].str.strip()], dtype=float)
        if df.shape[0] and not np.isnan(v).any():
            extra[c] = v
    weight = None if weight_col is None else _numeric(df, weight_col, path)
    if weight is not None:
        bad = np.nonzero(~(weight > 0))[0]
        if bad.size:
            raise ValidationError(f"{path}: nonpositive weight {weight[bad[0]]!r} in row {bad[0] + 1}")
    return ObservationTable.from_arrays(
        df[sc.id].to_numpy(object),
        _numeric(df, sc.y, path),
        np.column_stack([_numeric(df, c, path) for c in sc.x]),
        np.column_stack([_numeric(df, c, path) for c in sc.w]) if sc.w else None,
        weight,
        _period_col(df, sc.period, path),
        y_name=sc.y, x_names=sc.x, w_names=sc.w, extra=extra)


def load_shares(path, schema=None, allow_oversized=False) -> ExposureMatrix:
    sc = _schema(ShareSchema, schema)
    df = _read(path)
    _require(df, [sc.obs, sc.shock, sc.share, sc.period], path)
    share = _numeric(df, sc.share, path)
    neg = np.nonzero(share < 0)[0]
    if neg.size:
        raise ValidationError(f"{path}: negative share {share[neg[0]]!r} in row {neg[0] + 1}")
    return ExposureMatrix.from_triplets(df[sc.obs].to_numpy(object), df[sc.shock].to_numpy(object),
                                        share, _period_col(df, sc.period, path),
                                        allow_oversized=allow_oversized)


def load_shocks(path, schema=None) -> ShockTable:
    """Load a shock CSV. Unused columns are kept verbatim as string labels."""
    sc = _schema(ShockSchema, schema)
    df = _read(path)
    _require(df, [sc.id, *sc.g, *sc.q, sc.period, sc.cluster], path)
    if not sc.g:
        raise SchemaError("at least one instrument column is required")
    used = {sc.id, *sc.g, *sc.q, sc.period, sc.cluster}
    labels = {c: df[c].to_numpy(object) for c in df.columns if c not in used}
    tab = ShockTable.from_arrays(
        df[sc.id].to_numpy(object),
        np.column_stack([_numeric(df, c, path) for c in sc.g]),
        np.column_stack([_numeric(df, c, path) for c in sc.q]) if sc.q else None,
        _period_col(df, sc.period, path),
        None if sc.cluster is None else df[sc.cluster].to_numpy(object),
        g_names=sc.g, q_names=sc.q, labels=labels, cluster_name=sc.cluster or "cluster")
    return tab


def load_bundle(obs_path, shares_path, shocks_path, obs_schema=None, share_schema=None,
                shock_schema=None, unweighted=False, allow_oversized=False) -> PanelBundle:
    return PanelBundle(load_observations(obs_path, obs_schema, unweighted),
                       load_shares(shares_path, share_schema, allow_oversized),
                       load_shocks(shocks_path, shock_schema))


FLOAT_FORMAT = "%.17g"


def write_observations(tab: ObservationTable, path):
    cols = {"obs_id": tab.obs_id}
    if tab.period is not None:
        cols["period"] = tab.period
    cols[tab.y_name] = tab.y
    for j, n in enumerate(tab.x_names):
        cols[n] = tab.x[:, j]
    for j, n in enumerate(tab.w_names):
        cols[n] = tab.w[:, j]
    cols["weight"] = tab.weight
    cols.update(tab.extra)
    pd.DataFrame(cols).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return ObsSchema(y=tab.y_name, x=tab.x_names, w=tab.w_names,
                     period="period" if tab.period is not None else None)


def write_shares(ex: ExposureMatrix, path):
    cols = {"obs_id": ex.obs_id}
    if ex.period is not None:
        cols["period"] = ex.period
    cols["shock_id"] = ex.shock_id
    cols["share"] = ex.share
    pd.DataFrame(cols).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return ShareSchema(period="period" if ex.period is not None else None)


def write_shocks(tab: ShockTable, path):
    cols = {"shock_id": tab.shock_id}
    if tab.period is not None:
        cols["period"] = tab.period
    for j, n in enumerate(tab.g_names):
        cols[n] = tab.g[:, j]
    for j, n in enumerate(tab.q_names):
        cols[n] = tab.q[:, j]
    if tab.cluster is not None:
        cols["cluster"] = tab.cluster
    cols.update(tab.labels)
    pd.DataFrame(cols).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return ShockSchema(g=tab.g_names, q=tab.q_names,
                       period="period" if tab.period is not None else None,
                       cluster="cluster" if tab.cluster is not None else None)
