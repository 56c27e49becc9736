"""Monte Carlo engine for finite-sample studies of the SSIV estimator.

Replications redraw the shocks while holding exposure, weights and the
structural residuals fixed, with a true effect of zero:
``z* = S g*``, ``x* = π z* + û``, ``y* = ε̂``.

Every replication gets its own counter-based generator keyed by
``(seed, rep_index)``; shocks are drawn in shock-table order from that
stream. Results therefore do not depend on how replications are split
across workers.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .aggregate import ShareAggregator, ShockLevelDataset
from .data import (
    MISSING_SHOCK,
    ExposureMatrix,
    ObservationTable,
    PanelBundle,
    ShockTable,
    _frozen,
    relabel_panel,
)
from .errors import EstimationError, SSIVError, ValidationError
from .estimate import critical_value, lm_statistic, orthogonality_moment, ssiv_estimate
from .regress import iv_fit, sandwich_vcov, wdot

MODES = ("normal", "wild", "cluster", "ar1")
MAX_FAIL_SHARE = 0.01


def rng_for(seed, rep_index, stream=0):
    """Counter-based generator for one replication."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep_index), int(stream)])))


def _missing_mask(shocks):
    ids = shocks.labels.get("base_id", shocks.shock_id)
    return np.asarray(ids) == MISSING_SHOCK


def effective_workers(workers):
    cap = os.environ.get("SSIV_THREADS")
    w = max(1, int(workers or 1))
    if cap:
        try:
            w = min(w, max(1, int(cap)))
        except ValueError:
            pass
    return w


@dataclass(frozen=True)
class DgpSpec:
    """Shock-generating process and study settings.

    ``mode`` is ``normal`` (iid N(0, σ_t²), σ_t matched to the s-weighted
    variance of period-demeaned base shocks unless ``sigma`` is given),
    ``wild`` (base shocks times iid N(0, 1) multipliers), ``cluster``
    (equicorrelated within clusters, correlation ``rho``) or ``ar1``
    (within-shock AR(1) across periods with coefficient ``rho``).
    """

    mode: str = "normal"
    reps: int = 1000
    seed: int = 0
    sigma: float | None = None
    rho: float = 0.5
    pi: float | None = None
    n_instruments: int = 1
    relevant: tuple | None = None
    level: float = 0.95
    naive: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown shock mode {self.mode!r}")
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        if self.n_instruments < 1:
            raise ValidationError("n_instruments must be at least 1")

    @property
    def relevance(self):
        r = np.zeros(self.n_instruments, dtype=bool)
        if self.relevant is None:
            r[0] = True
        else:
            r[list(self.relevant)] = True
        return r


@dataclass(frozen=True)
class SimulationDesign:
    """Fixed base data for simulations.

    ``eps`` and ``u`` are observation-level residuals already residualized
    on the controls; ``base_g`` are period-demeaned base shocks.
    """

    bundle: PanelBundle
    eps: np.ndarray
    u: np.ndarray
    pi: float
    base_g: np.ndarray
    controls: tuple | None = None
    shock_period: np.ndarray | None = None
    shock_group: np.ndarray | None = None
    cluster: np.ndarray | None = None
    eps_n: np.ndarray | None = None
    u_n: np.ndarray | None = None

    @classmethod
    def from_bundle(cls, bundle: PanelBundle, controls=None):
        """Estimate π̂, ε̂ and û from data (just-identified, first instrument)."""
        flat = relabel_panel(bundle)
        agg = ShareAggregator(flat, controls)
        obs, sh = flat.observations, flat.shocks
        z = np.asarray(flat.matrix @ sh.g[:, 0]).ravel()
        V = agg.residualize(np.column_stack([obs.y, obs.x[:, 0], z]))
        yp, xp, zp = V.T
        e = obs.weight
        beta = wdot(zp, yp, e) / wdot(zp, xp, e)
        pi = wdot(zp, xp, e) / wdot(zp, zp, e)
        return cls.from_residuals(flat, yp - beta * xp, xp - pi * zp, float(pi), controls)

    @classmethod
    def from_residuals(cls, bundle, eps, u, pi, controls=None):
        flat = relabel_panel(bundle)
        sh = flat.shocks
        period = sh.labels["period"].astype(np.int64) if "period" in sh.labels else sh.period
        group = sh.labels.get("base_id", sh.shock_id)
        s = flat.shock_weights
        g = np.asarray(sh.g[:, 0], dtype=float).copy()
        real = ~_missing_mask(sh)
        g = _demean(g, s * real, period)
        g[~real] = 0.0
        agg = ShareAggregator(flat, controls)
        eb = np.zeros(sh.n)
        ub = np.zeros(sh.n)
        eb[agg.keep] = agg.average(eps)
        ub[agg.keep] = agg.average(u)
        return cls(flat, np.asarray(eps, float), np.asarray(u, float), float(pi), g,
                   None if controls is None else tuple(controls), period, np.asarray(group),
                   sh.cluster, eb, ub)

    def with_bundle(self, bundle, eps=None, u=None):
        """Same residuals on a modified bundle (e.g. reweighted)."""
        d = SimulationDesign.from_residuals(bundle, self.eps if eps is None else eps,
                                            self.u if u is None else u, self.pi, self.controls)
        return replace(d, base_g=self.base_g if d.base_g.shape == self.base_g.shape else d.base_g)


def _demean(g, w, period):
    g = g.copy()
    if period is None:
        groups = [np.ones(g.size, dtype=bool)]
    else:
        groups = [period == t for t in np.unique(period)]
    for m in groups:
        ww = w[m]
        mu = np.sum(ww * g[m]) / np.sum(ww) if np.sum(ww) > 0 else np.mean(g[m])
        g[m] -= mu
    return g


def _sigma_by_period(design: SimulationDesign, spec: DgpSpec):
    N = design.base_g.size
    if spec.sigma is not None:
        return np.full(N, float(spec.sigma))
    s = design.bundle.shock_weights * ~_missing_mask(design.bundle.shocks)
    sig = np.empty(N)
    period = design.shock_period
    groups = [np.ones(N, dtype=bool)] if period is None else [period == t for t in np.unique(period)]
    for m in groups:
        w = s[m]
        if w.sum() <= 0:
            w = np.ones(m.sum())
        var = np.sum(w * design.base_g[m] ** 2) / np.sum(w)
        sig[m] = math.sqrt(var)
    return sig


def draw_shocks(spec: DgpSpec, design: SimulationDesign, rep_index: int) -> np.ndarray:
    """Shock draws g* of shape (N, J) for one replication."""
    rng = rng_for(spec.seed, rep_index)
    N, J = design.base_g.size, spec.n_instruments
    nu = rng.standard_normal((N, J))
    missing = _missing_mask(design.bundle.shocks)
    if spec.mode == "wild":
        out = design.base_g[:, None] * nu
    elif spec.mode == "normal":
        out = _sigma_by_period(design, spec)[:, None] * nu
    elif spec.mode == "cluster":
        if design.cluster is None:
            raise ValidationError("cluster shock mode needs cluster labels on the shock table")
        codes = np.unique(design.cluster, return_inverse=True)[1]
        common = rng.standard_normal((int(codes.max()) + 1, J))
        rho = spec.rho
        out = _sigma_by_period(design, spec)[:, None] * (math.sqrt(rho) * common[codes]
                                                         + math.sqrt(1 - rho) * nu)
    else:
        rho = spec.rho
        out = nu.copy()
        if design.shock_period is not None:
            order = np.lexsort((design.shock_period, design.shock_group))
            prev = None
            for i in order:
                if prev is not None and design.shock_group[prev] == design.shock_group[i]:
                    out[i] = rho * out[prev] + math.sqrt(1 - rho**2) * nu[i]
                prev = i
        out = _sigma_by_period(design, spec)[:, None] * out
    out[missing] = 0.0
    return out


@dataclass
class StudyReport:
    design: str
    mode: str
    reps: int
    n_failed: int
    n_instruments: int
    rejection_rate: float
    rejection_rate_null_imposed: float
    median_bias_pct_sd: float
    median_f: float | None
    mean_estimate: float
    sd_estimate: float
    rejection_rate_naive: float | None = None
    label: str | None = None
    trace: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_trace=False):
        d = asdict(self)
        if not include_trace:
            d.pop("trace")
        return d


class _Engine:
    """Per-replication work for one design; picklable for process pools."""

    def __init__(self, spec: DgpSpec, design: SimulationDesign, study: str):
        self.spec, self.design, self.study = spec, design, study
        flat = design.bundle
        self.agg = ShareAggregator(flat, design.controls)
        self.S = flat.matrix
        sh = flat.shocks
        keep = self.agg.keep
        self.keep = keep
        self.ybar = self.agg.average(design.eps)
        self.ubar = self.agg.average(design.u)
        J = spec.n_instruments
        pi = design.pi if spec.pi is None else spec.pi
        self.pis = np.where(spec.relevance, pi, 0.0)
        self.template = ShockLevelDataset(
            shock_id=np.asarray(sh.shock_id)[keep], s=self.agg.s, ybar=self.ybar,
            xbar=self.ubar[:, None], g=np.zeros((keep.size, J)), q=np.asarray(sh.q)[keep],
            zbar=np.zeros((keep.size, J)),
            period=None if design.shock_period is None else np.asarray(design.shock_period)[keep],
            cluster=None if sh.cluster is None else np.asarray(sh.cluster)[keep],
            g_names=tuple(f"g{j + 1}" for j in range(J)), q_names=sh.q_names)
        self.crit = critical_value(spec.level)
        if study == "shock_iv":
            self.eps_n = design.eps_n[keep]
            self.u_n = design.u_n[keep]

    def one(self, rep):
        spec = self.spec
        g = draw_shocks(spec, self.design, rep)
        gk = g[self.keep]
        if self.study == "shock_iv":
            ds = replace(self.template, ybar=self.eps_n, xbar=(gk @ self.pis + self.u_n)[:, None],
                         g=gk, zbar=gk)
        else:
            z = np.asarray(self.S @ g)
            zp = self.agg.residualize(z)
            zbar = self.agg.average(zp)
            xbar = zbar @ self.pis + self.ubar
            ds = replace(self.template, xbar=xbar[:, None], g=gk, zbar=zbar)
        rep_ = ssiv_estimate(ds, "hc", level=spec.level)
        b, se = float(rep_.coef[0]), float(rep_.se[0])
        rej = abs(b) > self.crit * se
        lm = float(lm_statistic(ds, 0.0)[0])
        from scipy import stats
        crit_lm = self.crit**2 if ds.J == 1 else float(stats.chi2.ppf(spec.level, ds.J))
        rej0 = lm > crit_lm
        f = rep_.effective_f if rep_.effective_f is not None else np.nan
        naive = np.nan
        if spec.naive and self.study != "shock_iv":
            e = self.design.bundle.observations.weight
            xp = zp @ self.pis + self.design.u
            fit = iv_fit(self.design.eps, xp[:, None], zp, e)
            v = sandwich_vcov(fit, "hc")
            naive = float(abs(fit.coef[0]) > self.crit * v.se[0])
        return (b, se, float(rej), float(rej0), float(f), naive)

    def chunk(self, reps):
        out = np.full((len(reps), 7), np.nan)
        for i, r in enumerate(reps):
            try:
                out[i, :6] = self.one(r)
                out[i, 6] = 0.0
            except (EstimationError, np.linalg.LinAlgError):
                out[i, 6] = 1.0
        return out


def _run_chunk(args):
    engine, reps = args
    return engine.chunk(reps)


def _run(engine: _Engine, reps, workers):
    reps = list(reps)
    workers = effective_workers(workers)
    if workers == 1 or len(reps) < 2:
        return engine.chunk(reps)
    nchunk = min(len(reps), workers * 4)
    bounds = np.linspace(0, len(reps), nchunk + 1).astype(int)
    chunks = [reps[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    import multiprocessing
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        parts = list(ex.map(_run_chunk, [(engine, c) for c in chunks]))
    return np.vstack(parts)


def _summarize(res, spec, design_name, label=None, keep_trace=False, extra=None):
    failed = res[:, 6] == 1.0
    nf = int(failed.sum())
    if nf > MAX_FAIL_SHARE * len(res):
        raise EstimationError(f"{nf} of {len(res)} replications failed (more than 1%)")
    ok = res[~failed]
    b = ok[:, 0]
    sd = float(np.std(b, ddof=1)) if b.size > 1 else float("nan")
    f = ok[:, 4]
    naive = ok[:, 5]
    return StudyReport(
        design=design_name, mode=spec.mode, reps=int(len(res)), n_failed=nf,
        n_instruments=spec.n_instruments,
        rejection_rate=float(ok[:, 2].mean()), rejection_rate_null_imposed=float(ok[:, 3].mean()),
        median_bias_pct_sd=float(100.0 * np.median(b) / sd) if sd > 0 else float("nan"),
        median_f=None if np.all(np.isnan(f)) else float(np.nanmedian(f)),
        mean_estimate=float(b.mean()), sd_estimate=sd,
        rejection_rate_naive=None if np.all(np.isnan(naive)) else float(np.nanmean(naive)),
        label=label, trace=res.tolist() if keep_trace else None, extra=extra or {})


def run_rejection_study(spec: DgpSpec, design: SimulationDesign, study="ssiv", workers=1,
                        keep_trace=False, label=None) -> StudyReport:
    """Rejection rates of nominal tests of the true null β = 0.

    ``study="ssiv"`` rebuilds the shift-share instrument and estimates the
    equivalent shock-level regression; ``"shock_iv"`` runs a conventional
    shock-level IV on the aggregated residuals with the shocks themselves
    as instruments. Each replication records the exposure-robust Wald test
    (null not imposed), the null-imposed LM test and, when ``spec.naive``,
    the observation-level HC Wald test.
    """
    if study not in ("ssiv", "shock_iv"):
        raise ValidationError(f"unknown design {study!r}")
    engine = _Engine(spec, design, study)
    res = _run(engine, range(spec.reps), workers)
    return _summarize(res, spec, study, label, keep_trace)


def run_many_weak_study(spec: DgpSpec, design: SimulationDesign, J_values=(1, 5, 10, 25, 50),
                        reps=None, study="ssiv", workers=1) -> dict:
    """Shock-level 2SLS with J instruments of which only the first is relevant.

    ``reps`` optionally maps J to a replication count (defaults to
    ``spec.reps``). Returns ``{J: StudyReport}``.
    """
    out = {}
    for J in J_values:
        if J < 1:
            raise ValidationError("J must be at least 1")
        R = spec.reps if reps is None else int(reps.get(J, spec.reps))
        sp_ = replace(spec, n_instruments=int(J), relevant=(0,), reps=R)
        out[int(J)] = run_rejection_study(sp_, design, study, workers, label=f"J={J}")
    return out


# ----------------------------------------------------------- bundle surgery

def reweight_to_hhi(bundle: PanelBundle, target_hhi: float, tol=1e-10):
    """Concentrate shock weights to a target Herfindahl index.

    Real-shock exposure mass ``E_ln = e_l s_ln`` is rescaled by
    ``s̃_n / s_n`` with ``s̃_n ∝ s_n^α`` (α > 1 found by bisection), leaving
    the missing-shock mass ``e_l (1 - S_l)`` (or the ``__missing__`` shock)
    unchanged; weights and shares are then rebuilt.

    Returns
    -------
    (PanelBundle, float)
        The reweighted bundle and the exponent α.
    """
    obs, ex, sh = bundle.observations, bundle.exposures, bundle.shocks
    S = bundle.matrix
    e = obs.weight
    real = ~_missing_mask(sh)
    s = np.asarray(S.T @ e).ravel()
    pos = real & (s > 0)
    sp_ = s[pos]

    def hhi(a):
        w = np.exp(a * np.log(sp_) - np.max(a * np.log(sp_)))
        w = w / w.sum()
        return float(np.sum(w**2))

    h1 = hhi(1.0)
    if not (0 < target_hhi < 1):
        raise ValidationError("target HHI must lie in (0, 1)")
    if target_hhi < h1 - 1e-12:
        raise ValidationError(f"target HHI {target_hhi:.6g} is below the current HHI {h1:.6g}")
    if abs(target_hhi - h1) <= 1e-12:
        return bundle, 1.0
    ties = int(np.sum(sp_ == sp_.max()))
    if target_hhi >= 1.0 / ties:
        raise ValidationError(f"target HHI {target_hhi:.6g} unreachable (limit {1.0 / ties:.6g})")
    lo, hi = 1.0, 2.0
    while hhi(hi) < target_hhi:
        lo, hi = hi, hi * 2
        if hi > 1e6:
            raise ValidationError("could not bracket the target HHI")
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if hhi(mid) < target_hhi:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    ratio = np.ones(sh.n)
    la = alpha * np.log(sp_)
    st = np.exp(la - la.max())
    st = st * sp_.sum() / st.sum()
    ratio[pos] = st / sp_
    E = sp.diags(e) @ S
    Et = (E @ sp.diags(ratio)).tocsr()
    E0 = e * (1.0 - np.asarray(S.sum(axis=1)).ravel()) if bundle.incomplete and real.all() else np.zeros(obs.n)
    et = np.asarray(Et.sum(axis=1)).ravel() + np.clip(E0, 0.0, None)
    new_S = (sp.diags(1.0 / et) @ Et).tocoo()
    new_obs = replace(obs, weight=_frozen(et / et.sum()))
    per = None if ex.period is None else np.asarray(sh.period)[new_S.col]
    new_ex = ExposureMatrix.from_triplets(np.asarray(obs.obs_id)[new_S.row],
                                          np.asarray(sh.shock_id)[new_S.col], new_S.data, per,
                                          allow_oversized=True)
    return PanelBundle(new_obs, new_ex, sh), alpha


def subsample_regions(bundle: PanelBundle, n_regions: int, seed: int, rep_index: int = 0) -> PanelBundle:
    """Random subset of regions, keeping every period of each chosen region."""
    obs, ex = bundle.observations, bundle.exposures
    base = np.asarray(obs.labels.get("base_id", obs.obs_id))
    regions = np.unique(base)
    if n_regions > regions.size:
        raise ValidationError(f"cannot draw {n_regions} of {regions.size} regions")
    need = obs.w.shape[1] + obs.x.shape[1] + 1
    if n_regions < max(2, need):
        raise ValidationError(f"{n_regions} regions are too few to identify the model (need {max(2, need)})")
    if n_regions == regions.size:
        return bundle
    rng = rng_for(seed, rep_index, stream=1)
    chosen = set(rng.choice(regions, size=n_regions, replace=False).tolist())
    rows = np.array([b in chosen for b in base])
    keep_ids = set(np.asarray(obs.obs_id)[rows].tolist())
    sub = lambda a: _frozen(np.asarray(a)[rows], np.asarray(a).dtype)  # noqa: E731
    new_obs = ObservationTable(
        sub(obs.obs_id), sub(obs.y), sub(obs.x), sub(obs.w), _frozen(obs.weight[rows] / obs.weight[rows].sum()),
        None if obs.period is None else sub(obs.period), obs.y_name, obs.x_names, obs.w_names,
        {k: sub(v) for k, v in obs.extra.items()}, {k: sub(v) for k, v in obs.labels.items()})
    m = np.array([o in keep_ids for o in ex.obs_id.tolist()])
    new_ex = ExposureMatrix(_frozen(ex.obs_id[m], object), _frozen(ex.shock_id[m], object),
                            _frozen(ex.share[m]), None if ex.period is None else _frozen(ex.period[m], np.int64))
    return PanelBundle(new_obs, new_ex, bundle.shocks)


def _mode(values, weights=None):
    vals, inv = np.unique(np.asarray(values), return_inverse=True)
    counts = np.bincount(inv)
    return vals[int(np.argmax(counts))]


def aggregate_industries(bundle: PanelBundle, mapping) -> PanelBundle:
    """Merge shocks into groups.

    Shares are summed within group; instruments become ``s_n``-weighted group
    means; shock controls, cluster and other labels take the group mode.
    ``mapping`` maps ``shock_id`` (or ``(shock_id, period)``) to a group id.
    """
    sh, ex = bundle.shocks, bundle.exposures
    periods = sh.period
    group_of = []
    by_id = {}
    for i, sid in enumerate(sh.shock_id.tolist()):
        p = None if periods is None else int(periods[i])
        if (sid, p) in mapping:
            gid = mapping[(sid, p)]
        elif sid in mapping:
            gid = mapping[sid]
        else:
            raise ValidationError(f"mapping has no group for shock {sid}")
        if sid in by_id and by_id[sid] != gid:
            raise ValidationError(f"conflicting period structure: shock {sid} maps to groups "
                                  f"{by_id[sid]} and {gid} in different periods")
        by_id[sid] = gid
        group_of.append((str(gid), p))
    keys = list(dict.fromkeys(group_of))
    col = {k: j for j, k in enumerate(keys)}
    idx = np.array([col[k] for k in group_of])
    G = len(keys)
    s = bundle.shock_weights
    sizes = np.bincount(idx, minlength=G)
    ssum = np.bincount(idx, weights=s, minlength=G)
    g_new = np.empty((G, sh.g.shape[1]))
    q_new = np.empty((G, sh.q.shape[1]))
    cl_new = None if sh.cluster is None else np.empty(G, dtype=object)
    labels = {k: np.empty(G, dtype=object) for k in sh.labels}
    for j in range(G):
        mem = np.nonzero(idx == j)[0]
        if sizes[j] == 1:
            g_new[j] = sh.g[mem[0]]
        else:
            w = s[mem] if ssum[j] > 0 else np.ones(mem.size)
            g_new[j] = (w[:, None] * sh.g[mem]).sum(axis=0) / w.sum()
        for c in range(sh.q.shape[1]):
            q_new[j, c] = _mode(sh.q[mem, c])
        if cl_new is not None:
            cl_new[j] = _mode(sh.cluster[mem])
        for k in labels:
            labels[k][j] = _mode(sh.labels[k][mem])
    new_sh = ShockTable.from_arrays(
        [k[0] for k in keys], g_new, q_new, None if periods is None else [k[1] for k in keys],
        cl_new, g_names=sh.g_names, q_names=sh.q_names, labels=labels, cluster_name=sh.cluster_name)
    A = sp.csr_matrix((np.ones(sh.n), (np.arange(sh.n), idx)), shape=(sh.n, G))
    M = (bundle.matrix @ A).tocoo()
    obs = bundle.observations
    per = None if ex.period is None else np.asarray(obs.period)[M.row]
    new_ex = ExposureMatrix.from_triplets(np.asarray(obs.obs_id)[M.row], np.array([keys[c][0] for c in M.col], dtype=object),
                                          M.data, per, allow_oversized=True)
    if G == sh.n and np.all(idx == np.arange(sh.n)) and all(k[0] == s_ for k, s_ in zip(keys, sh.shock_id.tolist())):
        return bundle
    return PanelBundle(obs, new_ex, new_sh)


# ------------------------------------------------------------------ studies

def make_synthetic_design(L=700, N=400, shocks_per_region=5, pi=1.0, loading=0.0,
                          endogeneity=0.0, noise=1.0, weight_sigma=0.0, periods=1, seed=20240501,
                          dirichlet=1.0, clusters=None):
    """Synthetic complete-shares design.

    Each region draws ``shocks_per_region`` distinct shocks with Dirichlet
    shares. Structural residuals are ``ε_l = loading·Σ_n s_ln ν_n + η_l``
    with shock-level components ν_n, and ``u_l = endogeneity·ε_l + ξ_l``.
    Base shocks are standard normal. Returns a :class:`SimulationDesign`.
    """
    rng = np.random.default_rng(seed)
    rows, cols, vals = [], [], []
    Lt, Nt = L * periods, N * periods
    for t in range(periods):
        for l in range(L):
            k = min(shocks_per_region, N)
            picks = rng.choice(N, size=k, replace=False)
            sh = rng.dirichlet(np.full(k, dirichlet))
            rows += [t * L + l] * k
            cols += (t * N + picks).tolist()
            vals += sh.tolist()
    S = sp.csr_matrix((vals, (rows, cols)), shape=(Lt, Nt))
    e = np.exp(weight_sigma * rng.standard_normal(L))
    e = np.tile(e, periods)
    nu = rng.standard_normal(Nt)
    eps = loading * (S @ nu) + noise * rng.standard_normal(Lt)
    u = endogeneity * eps + rng.standard_normal(Lt)
    g = rng.standard_normal(Nt)
    z = S @ g
    x = pi * z + u
    y = eps
    oid = np.array([f"r{l}" for l in range(L)] * periods, dtype=object)
    sid = np.array([f"n{n}" for n in range(N)] * periods, dtype=object)
    operiod = np.repeat(np.arange(periods), L) if periods > 1 else None
    speriod = np.repeat(np.arange(periods), N) if periods > 1 else None
    cl = None
    if clusters:
        cl = np.array([f"c{n % clusters}" for n in range(N)] * periods, dtype=object)
    obs = ObservationTable.from_arrays(oid, y, x, None, e, operiod)
    shocks = ShockTable.from_arrays(sid, g, None, speriod, cl)
    Sc = S.tocoo()
    ex = ExposureMatrix.from_triplets(oid[Sc.row], sid[Sc.col], Sc.data,
                                      None if operiod is None else operiod[Sc.row], allow_oversized=True)
    bundle = PanelBundle(obs, ex, shocks)
    flat = relabel_panel(bundle)
    agg = ShareAggregator(flat, None)
    V = agg.residualize(np.column_stack([eps, u]))
    return SimulationDesign.from_residuals(flat, V[:, 0], V[:, 1], pi)


def orthogonality_scaling(design: SimulationDesign, targets, reps=500, seed=0):
    """SD across draws of ``Σ s_n g*_n ε̄*_n`` along a reweighting grid.

    Shocks g* and shock-level residuals ε̄* are drawn independently (standard
    normal). Returns ``(hhi, sd, slope)`` with the log-log slope of sd on HHI.
    """
    hh, sds = [], []
    flat = design.bundle
    for tgt in targets:
        b, _ = reweight_to_hhi(flat, tgt) if tgt is not None else (flat, 1.0)
        agg = ShareAggregator(b, None)
        s = agg.s / agg.s.sum()
        N = s.size
        vals = np.empty(reps)
        for r in range(reps):
            rng = rng_for(seed, r, stream=2)
            g = rng.standard_normal(N)
            eb = rng.standard_normal(N)
            ds = ShockLevelDataset(shock_id=np.arange(N).astype(str).astype(object), s=s, ybar=eb,
                                   xbar=eb[:, None], g=g[:, None], q=np.ones((N, 1)))
            vals[r] = orthogonality_moment(ds, eb)
        hh.append(float(np.sum(s**2)))
        sds.append(float(np.std(vals, ddof=1)))
    slope = float(np.polyfit(np.log(hh), np.log(sds), 1)[0])
    return np.array(hh), np.array(sds), slope


def run_subsample_study(spec: DgpSpec, design: SimulationDesign, n_regions: int, workers=1) -> StudyReport:
    """Rejection study where each replication uses a fresh random subset of regions."""
    res = _run(_SubsampleEngine(spec, design, n_regions), range(spec.reps), workers)
    return _summarize(res, spec, "ssiv", label=f"subsample L'={n_regions}")


class _SubsampleEngine:
    def __init__(self, spec, design, n_regions):
        self.spec, self.design, self.n_regions = spec, design, n_regions

    def chunk(self, reps):
        out = np.full((len(reps), 7), np.nan)
        flat = self.design.bundle
        for i, r in enumerate(reps):
            try:
                sub = subsample_regions(flat, self.n_regions, self.spec.seed, r)
                ids = {k: j for j, k in enumerate(flat.observations.obs_id.tolist())}
                rows = np.array([ids[o] for o in sub.observations.obs_id.tolist()])
                d = SimulationDesign.from_residuals(sub, self.design.eps[rows], self.design.u[rows],
                                                    self.design.pi, self.design.controls)
                d = replace(d, base_g=self.design.base_g)
                out[i, :6] = _Engine(self.spec, d, "ssiv").one(r)
                out[i, 6] = 0.0
            except (EstimationError, np.linalg.LinAlgError, SSIVError):
                out[i, 6] = 1.0
        return out


def _silence():
    warnings.filterwarnings("ignore", message=".*zero exposure.*")
