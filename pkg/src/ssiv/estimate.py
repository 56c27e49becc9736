"""Shock-level SSIV estimation and inference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .aggregate import ShareAggregator, ShockLevelDataset, ssaggregate
from .data import PanelBundle, relabel_panel
from .errors import EstimationError, InapplicableError, ValidationError
from .regress import (
    Residualizer,
    VcovEstimate,
    iv_fit,
    sandwich_vcov,
    score_meat,
    tsls_combination,
    wdot,
)

F_SENTINEL = 1e12
RIDGE = 1e-10
WALD_Z95 = 1.96

JUST_ID, TSLS, LIML, GMM2STEP = "JUST_ID", "TSLS", "LIML", "GMM2STEP"
_METHODS = {"tsls": TSLS, "2sls": TSLS, "liml": LIML, "gmm": GMM2STEP, "gmm2step": GMM2STEP}


def critical_value(level=0.95):
    """Two-sided normal critical value; exactly 1.96 at the 95% level."""
    return WALD_Z95 if abs(level - 0.95) < 1e-12 else float(stats.norm.ppf(0.5 + level / 2))


@dataclass(frozen=True)
class Inference:
    """Variance mode: ``hc``, ``cluster`` (on a label column) or ``hac``."""

    kind: str = "hc"
    column: str | None = None
    bandwidth: int | None = None

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, Inference):
            return spec
        if spec is None:
            return cls()
        spec = str(spec).strip()
        kind, _, arg = spec.partition(":")
        kind = kind.lower()
        if kind == "hc":
            return cls()
        if kind == "cluster":
            return cls("cluster", arg or "cluster")
        if kind == "hac":
            try:
                bw = int(arg)
            except ValueError:
                raise ValidationError(f"HAC bandwidth must be an integer, got {arg!r}") from None
            return cls("hac", None, bw)
        raise ValidationError(f"unknown inference mode {spec!r}")

    def __str__(self):
        if self.kind == "cluster":
            return f"cluster:{self.column}"
        if self.kind == "hac":
            return f"hac:{self.bandwidth}"
        return "hc"

    def kwargs(self, ds: ShockLevelDataset):
        if self.kind == "cluster":
            return {"clusters": ds.label(self.column)}
        if self.kind == "hac":
            if ds.period is None:
                raise ValidationError("HAC inference needs shock periods as the ordering column")
            return {"bandwidth": self.bandwidth, "order": ds.period, "groups": ds.shock_id}
        return {}


@dataclass
class LmInterval:
    """Accepted set of an inverted LM test, as a union of intervals."""

    intervals: list
    level: float
    bounded: bool
    connected: bool
    resolution: float | None = None
    warnings: list = field(default_factory=list)

    def contains(self, b):
        return any(lo <= b <= hi for lo, hi in self.intervals)

    def to_list(self):
        return [[_num(lo), _num(hi)] for lo, hi in self.intervals]


def _num(v):
    if v is None:
        return None
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass
class EstimateReport:
    coef: np.ndarray
    vcov: VcovEstimate
    estimator: str
    inference: str
    n_shocks: int
    hhi: float
    resid: np.ndarray
    g_resid: np.ndarray
    x_names: tuple = ("x",)
    level: float = 0.95
    first_stage_f: float | None = None
    effective_f: float | None = None
    overid: dict | None = None
    lm_ci: LmInterval | None = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def se(self):
        return self.vcov.se

    @property
    def ci_wald(self):
        z = critical_value(self.level)
        return np.column_stack([self.coef - z * self.se, self.coef + z * self.se])

    @property
    def pvalues(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(self.se > 0, self.coef / self.se, np.inf * np.sign(self.coef))
        return 2 * stats.norm.sf(np.abs(t))

    def to_dict(self):
        names = list(self.x_names)
        out = {
            "estimator": self.estimator,
            "coefficients": {n: float(b) for n, b in zip(names, self.coef)},
            "se": {"mode": self.inference, **{n: float(s) for n, s in zip(names, self.se)}},
            "ci": {
                "level": self.level,
                "wald": {n: [float(lo), float(hi)] for n, (lo, hi) in zip(names, self.ci_wald)},
                "lm": None if self.lm_ci is None else {
                    "intervals": self.lm_ci.to_list(),
                    "bounded": self.lm_ci.bounded,
                    "connected": self.lm_ci.connected,
                },
            },
            "pvalues": {n: float(p) for n, p in zip(names, self.pvalues)},
            "f": {"first_stage": _opt(self.first_stage_f), "effective": _opt(self.effective_f)},
            "overid": self.overid,
            "n_shocks": int(self.n_shocks),
            "hhi": float(self.hhi),
            "notes": list(self.notes),
        }
        if self.vcov.n_clusters is not None:
            out["se"]["n_clusters"] = int(self.vcov.n_clusters)
        out.update(self.extra)
        return out


def _opt(v):
    return None if v is None else float(v)


@dataclass(frozen=True)
class _ShockSystem:
    """Shock-level variables residualized on q with weights s."""

    y: np.ndarray
    X: np.ndarray
    G: np.ndarray
    s: np.ndarray
    Zbar: np.ndarray | None


def _system(ds: ShockLevelDataset, y=None, X=None) -> _ShockSystem:
    if ds.n < ds.K + ds.q.shape[1]:
        raise EstimationError(f"{ds.n} shocks are too few for {ds.K} treatment(s) and "
                              f"{ds.q.shape[1]} shock control(s)")
    R = Residualizer(ds.q, ds.s, ds.q_names)
    yv = ds.ybar if y is None else y
    Xv = ds.xbar if X is None else X
    Xv = Xv[:, None] if Xv.ndim == 1 else Xv
    blocks = [yv[:, None], Xv, ds.g]
    if ds.zbar is not None:
        blocks.append(ds.zbar)
    V = R(np.column_stack(blocks))
    K, J = Xv.shape[1], ds.J
    return _ShockSystem(V[:, 0], V[:, 1:1 + K], V[:, 1 + K:1 + K + J], ds.s,
                        V[:, 1 + K + J:] if ds.zbar is not None else None)


def _report(ds, fit, vcov, estimator, inference, level, notes=(), x_names=None):
    rep = EstimateReport(
        coef=fit.coef, vcov=vcov, estimator=estimator, inference=str(inference), n_shocks=ds.n,
        hhi=ds.hhi, resid=fit.resid, g_resid=fit.Z, x_names=x_names or ds.x_names, level=level,
        notes=list(ds.notes) + list(notes))
    if inference.kind == "cluster":
        rep.notes.append(f"cluster-robust SE with small-sample factor C/(C-1), C={vcov.n_clusters}")
    elif inference.kind == "hac":
        rep.notes.append(f"HAC SE, Bartlett kernel, bandwidth {inference.bandwidth}")
    else:
        rep.notes.append("heteroskedasticity-robust SE (HC0)")
    return rep


def ssiv_estimate(ds: ShockLevelDataset, inference="hc", method=None, level=0.95,
                  lm_ci=False) -> EstimateReport:
    """Estimate the equivalent shock-level IV regression.

    Parameters
    ----------
    ds : ShockLevelDataset
    inference : str or Inference
        ``"hc"``, ``"cluster:<label>"`` or ``"hac:<bandwidth>"``.
    method : {"tsls", "liml", "gmm"}, optional
        Estimator when instruments outnumber treatments (default TSLS).
    level : float
        Confidence level for Wald and LM intervals.
    lm_ci : bool
        Also invert the null-imposed LM test (single treatment only).

    Returns
    -------
    EstimateReport
    """
    inference = Inference.parse(inference)
    if ds.J > ds.K or method is not None:
        rep = overidentified_fit(ds, method or "tsls", inference, level)
    else:
        sysm = _system(ds)
        fit = iv_fit(sysm.y, sysm.X, sysm.G, sysm.s)
        vcov = sandwich_vcov(fit, inference.kind, **inference.kwargs(ds))
        rep = _report(ds, fit, vcov, JUST_ID, inference, level)
    if ds.K == 1 and ds.zbar is not None:
        try:
            if ds.J == 1:
                rep.first_stage_f = first_stage_f(ds, inference)
            rep.effective_f = effective_f(ds, inference)
            for f in (rep.first_stage_f, rep.effective_f):
                if f is not None and f >= F_SENTINEL:
                    rep.notes.append(f"F statistic capped at sentinel {F_SENTINEL:g} (zero first-stage residual variance)")
                    break
        except EstimationError as exc:
            rep.notes.append(f"first-stage F unavailable: {exc}")
    if lm_ci:
        rep.lm_ci = lm_confidence_interval(ds, inference, level)
        rep.notes.extend(rep.lm_ci.warnings)
    return rep


def overidentified_fit(ds: ShockLevelDataset, method="tsls", inference="hc", level=0.95) -> EstimateReport:
    """TSLS, LIML or two-step GMM on the shock-level system.

    The overidentification statistic is the two-step GMM objective
    (uncentered Hansen J), referred to chi-squared with J - K degrees of
    freedom, and is reported whatever the method.
    """
    inference = Inference.parse(inference)
    est = _METHODS.get(str(method).lower())
    if est is None:
        raise ValidationError(f"unknown method {method!r}")
    sysm = _system(ds)
    K, J = sysm.X.shape[1], sysm.G.shape[1]
    if J < K:
        raise EstimationError(f"{J} instrument(s) cannot identify {K} treatment(s)")
    kw = inference.kwargs(ds)
    notes = []

    c_tsls = tsls_combination(sysm.X, sysm.G, sysm.s)
    fit1 = iv_fit(sysm.y, sysm.X, sysm.G, sysm.s, c_tsls)

    Wstar = None
    if J > K or est == GMM2STEP:
        u1 = (sysm.s * fit1.resid)[:, None] * sysm.G
        Omega = score_meat(u1, inference.kind, **kw)[0]
        Wstar, ridged = _inverse_weight(Omega)
        if ridged:
            notes.append(f"singular GMM weight matrix: ridge {RIDGE:g}*trace added")
            warnings.warn("singular GMM weight matrix; ridge fallback used", stacklevel=2)

    if est == TSLS:
        fit = fit1
        vcov = sandwich_vcov(fit, inference.kind, **kw)
    elif est == GMM2STEP:
        Gm = wdot(sysm.G, sysm.X, sysm.s)
        c = Gm.T @ Wstar
        fit = iv_fit(sysm.y, sysm.X, sysm.G, sysm.s, c)
        V = np.linalg.inv(Gm.T @ Wstar @ Gm)
        vcov = VcovEstimate(0.5 * (V + V.T), inference.kind, *_vcov_meta(inference, kw))
        notes.append("GMM first step uses the TSLS weight; variance (G'W*G)^-1")
    else:
        kappa = 1.0 if J == K else _liml_kappa(sysm)
        MX = sysm.X - _project(sysm.G, sysm.X, sysm.s)
        Xk = sysm.X - kappa * MX
        fit = iv_fit(sysm.y, sysm.X, Xk, sysm.s)
        vcov = sandwich_vcov(fit, inference.kind, **kw)
        notes.append(f"LIML kappa = {kappa:.10g}")

    rep = _report(ds, fit, vcov, est, inference, level, notes)
    rep.g_resid = sysm.G
    if J > K:
        m = wdot(sysm.G, sysm.y - sysm.X @ _gmm_coef(sysm, Wstar), sysm.s)
        stat = float(m @ Wstar @ m)
        df = J - K
        rep.overid = {"stat": stat, "df": df, "pvalue": float(stats.chi2.sf(stat, df))}
    return rep


def _gmm_coef(sysm, Wstar):
    Gm = wdot(sysm.G, sysm.X, sysm.s)
    return np.linalg.solve(Gm.T @ Wstar @ Gm, Gm.T @ Wstar @ wdot(sysm.G, sysm.y, sysm.s))


def _vcov_meta(inference, kw):
    if inference.kind != "cluster":
        return (None, inference.bandwidth if inference.kind == "hac" else None, 1.0)
    C = int(np.unique(kw["clusters"]).size)
    return (C, None, C / (C - 1))


def _inverse_weight(Omega):
    Omega = 0.5 * (Omega + Omega.T)
    ev = np.linalg.eigvalsh(Omega)
    if ev[0] <= ev[-1] * 1e-12:
        Omega = Omega + RIDGE * np.trace(Omega) * np.eye(Omega.shape[0])
        return np.linalg.inv(Omega), True
    return np.linalg.inv(Omega), False


def _project(G, V, s):
    """s-weighted fitted values of V on G."""
    coef = np.linalg.lstsq(np.sqrt(s)[:, None] * G, np.sqrt(s)[:, None] * V, rcond=None)[0]
    return G @ coef


def _liml_kappa(sysm):
    Y = np.column_stack([sysm.y, sysm.X])
    A = wdot(Y, Y, sysm.s)
    MY = Y - _project(sysm.G, Y, sysm.s)
    B = wdot(MY, MY, sysm.s)
    ev = scipy.linalg.eigh(A, B, eigvals_only=True)
    return float(ev[0])


def _first_stage_system(ds, inference):
    if ds.zbar is None:
        raise EstimationError("shift-share instrument aggregates are missing: aggregate with z")
    if ds.K != 1:
        raise EstimationError("first-stage statistics are defined for a single treatment")
    sysm = _system(ds)
    fit = iv_fit(sysm.X[:, 0], sysm.Zbar, sysm.G, sysm.s)
    return sysm, fit


def first_stage_f(ds: ShockLevelDataset, inference="hc") -> float:
    """Squared t-statistic of the shock-level first stage.

    IV of x̄ on z̄ instrumented by g (q controls, s weights). A zero
    residual variance gives the sentinel ``F_SENTINEL``.
    """
    inference = Inference.parse(inference)
    if ds.J != 1:
        raise EstimationError("first_stage_f needs a single instrument; use effective_f")
    sysm, fit = _first_stage_system(ds, inference)
    V = sandwich_vcov(fit, inference.kind, **inference.kwargs(ds)).matrix[0, 0]
    if V <= 0:
        return F_SENTINEL
    return float(min(fit.coef[0] ** 2 / V, F_SENTINEL))


def effective_f(ds: ShockLevelDataset, inference="hc", normalize=True) -> float:
    """Effective first-stage F for one treatment and J instruments.

    Numerator ``||Σ s g⊥ x̄||²``, denominator the trace of the robust
    variance of ``Σ s g⊥ η̂``, where η̂ are residuals from the IV of x̄ on z̄
    instrumented by g. With ``normalize`` the residualized instruments are
    first rotated to be s-orthonormal, which makes the statistic invariant to
    instrument scaling. With J = 1 both variants equal ``first_stage_f``.
    """
    inference = Inference.parse(inference)
    sysm, fit = _first_stage_system(ds, inference)
    G = sysm.G
    if normalize:
        Q = wdot(G, G, sysm.s)
        ev, U = np.linalg.eigh(0.5 * (Q + Q.T))
        if ev[0] <= ev[-1] * 1e-14:
            raise EstimationError("instruments are collinear after residualization")
        G = G @ (U / np.sqrt(ev)) @ U.T
    pi = wdot(G, sysm.X[:, 0], sysm.s)
    u = (sysm.s * fit.resid)[:, None] * G
    meat = score_meat(u, inference.kind, **inference.kwargs(ds))[0]
    tr = float(np.trace(meat))
    if tr <= 0:
        return F_SENTINEL
    return float(min(pi @ pi / tr, F_SENTINEL))


def lm_statistic(ds: ShockLevelDataset, beta0, inference="hc"):
    """Null-imposed LM statistic(s) for ``beta = beta0`` (scalar or array)."""
    inference = Inference.parse(inference)
    return _LmProblem(ds, inference).stat(np.atleast_1d(np.asarray(beta0, dtype=float)))


class _LmProblem:
    """Quadratic form of the LM statistic in beta0.

    Scores are ``s ĝ (ȳ⊥ - b x̄⊥) = p - b r``, so both the moment and its
    meat are polynomials in b and the statistic can be evaluated anywhere.
    """

    def __init__(self, ds, inference):
        if ds.K != 1:
            raise EstimationError("LM confidence intervals need a single treatment")
        sysm = _system(ds)
        self.J = ds.J
        P = (sysm.s * sysm.y)[:, None] * sysm.G
        R = (sysm.s * sysm.X[:, 0])[:, None] * sysm.G
        self.mp, self.mr = P.sum(axis=0), R.sum(axis=0)
        M = score_meat(np.column_stack([P, R]), inference.kind, **inference.kwargs(ds))[0]
        J = self.J
        self.Mpp, self.Mpr, self.Mrr = M[:J, :J], M[:J, J:], M[J:, J:]

    def stat(self, b):
        out = np.empty(b.shape)
        for i, bi in enumerate(b):
            m = self.mp - bi * self.mr
            V = self.Mpp - bi * (self.Mpr + self.Mpr.T) + bi**2 * self.Mrr
            if self.J == 1:
                out[i] = m[0] ** 2 / V[0, 0] if V[0, 0] > 0 else (0.0 if m[0] == 0 else np.inf)
            else:
                out[i] = float(m @ np.linalg.lstsq(V, m, rcond=None)[0])
        return out

    def limit(self):
        """Statistic as |b| -> infinity."""
        if self.J == 1:
            return self.mr[0] ** 2 / self.Mrr[0, 0] if self.Mrr[0, 0] > 0 else np.inf
        return float(self.mr @ np.linalg.lstsq(self.Mrr, self.mr, rcond=None)[0])


def lm_confidence_interval(ds: ShockLevelDataset, inference="hc", level=0.95, method="grid",
                           span=10.0, steps_per_se=50, tol=1e-6) -> LmInterval:
    """Invert the null-imposed shock-level LM test.

    For each candidate b the outcome ``ȳ - b x̄`` is residualized on q and its
    orthogonality with g is tested using the null-imposed residual variance.

    Parameters
    ----------
    method : {"grid", "analytic"}
        ``grid`` scans the estimate ± ``span`` SEs at step SE/``steps_per_se``
        and refines each boundary by bisection to ``tol``·SE. ``analytic``
        solves the quadratic inequality directly (single instrument only).

    Returns
    -------
    LmInterval
        Disconnected and unbounded accepted sets are reported as such.
    """
    inference = Inference.parse(inference)
    prob = _LmProblem(ds, inference)
    crit = critical_value(level) ** 2 if prob.J == 1 else float(stats.chi2.ppf(level, prob.J))
    if method == "analytic":
        return _lm_analytic(prob, crit, level)
    base = ssiv_estimate(ds, inference, level=level)
    bhat, se = float(base.coef[0]), float(base.se[0])
    if se <= 0:
        return LmInterval([(bhat, bhat)], level, True, True, 0.0, ["zero standard error: degenerate LM interval"])
    step = se / steps_per_se
    msgs = []
    half = span
    while True:
        grid = bhat + step * np.arange(-round(half * steps_per_se), round(half * steps_per_se) + 1)
        acc = prob.stat(grid) <= crit
        at_edge = acc[0] or acc[-1]
        if not at_edge or half >= span * 64:
            break
        if prob.limit() <= crit:
            break
        half *= 2
    intervals = []
    i = 0
    n = len(grid)
    while i < n:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and acc[j + 1]:
            j += 1
        lo = _refine(prob, crit, grid[i - 1], grid[i], tol * se) if i > 0 else -np.inf
        hi = _refine(prob, crit, grid[j + 1], grid[j], tol * se) if j < n - 1 else np.inf
        intervals.append((lo, hi))
        i = j + 1
    if any(np.isinf(v) for iv in intervals for v in iv):
        if prob.limit() <= crit:
            msgs.append("LM confidence set is unbounded")
        else:
            msgs.append(f"LM grid did not bracket an endpoint (resolution {step:.3g})")
            intervals = [(grid[0] if np.isinf(lo) else lo, grid[-1] if np.isinf(hi) else hi)
                         for lo, hi in intervals]
    if len(intervals) > 1:
        msgs.append("LM confidence set is disconnected")
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    bounded = all(np.isfinite(v) for iv in intervals for v in iv)
    return LmInterval(intervals, level, bounded, len(intervals) == 1, step, msgs)


def _refine(prob, crit, out, inn, tol):
    """Bisect between a rejected point ``out`` and an accepted point ``inn``."""
    while abs(out - inn) > tol:
        mid = 0.5 * (out + inn)
        if prob.stat(np.array([mid]))[0] <= crit:
            inn = mid
        else:
            out = mid
    return inn


def _lm_analytic(prob, crit, level):
    if prob.J != 1:
        raise EstimationError("analytic LM inversion needs a single instrument")
    a, b = prob.mp[0], prob.mr[0]
    A, B, C = prob.Mpp[0, 0], prob.Mpr[0, 0], prob.Mrr[0, 0]
    # (a - t b)^2 <= crit (A - 2 B t + C t^2)  <=>  qa t^2 + qb t + qc <= 0
    qa = b * b - crit * C
    qb = -2 * (a * b - crit * B)
    qc = a * a - crit * A
    disc = qb * qb - 4 * qa * qc
    msgs = []
    if abs(qa) < 1e-300:
        root = -qc / qb
        iv = [(-np.inf, root)] if qb > 0 else [(root, np.inf)]
        msgs.append("LM confidence set is unbounded")
        return LmInterval(iv, level, False, True, None, msgs)
    if disc < 0:
        if qa < 0:
            msgs.append("LM confidence set is the whole real line")
            return LmInterval([(-np.inf, np.inf)], level, False, True, None, msgs)
        return LmInterval([], level, True, False, None, ["LM confidence set is empty"])
    r = np.sqrt(disc)
    t1, t2 = sorted([(-qb - r) / (2 * qa), (-qb + r) / (2 * qa)])
    if qa > 0:
        return LmInterval([(t1, t2)], level, True, True, None, msgs)
    msgs.append("LM confidence set is a union of two unbounded rays")
    return LmInterval([(-np.inf, t1), (t2, np.inf)], level, False, False, None, msgs)


def falsification_test(data, r, form="iv", inference="hc", level=0.95, **aggregate_kwargs) -> EstimateReport:
    """Placebo regression of an aggregated variable r.

    ``data`` is either a :class:`ShockLevelDataset` (``r`` names one of its
    ``extra`` aggregates) or a :class:`PanelBundle` (``r`` is an observation
    column name or an (L,) array, aggregated with ``aggregate_kwargs``).
    ``form="iv"`` regresses r̄ on x̄ instrumented by g; ``form="reduced"``
    regresses r̄ on z̄ instrumented by g.
    """
    if isinstance(data, PanelBundle):
        ds = ssaggregate(data, extra={"placebo": r}, **aggregate_kwargs)
        name = "placebo"
    else:
        ds, name = data, r
    if name not in ds.extra:
        raise ValidationError(f"placebo variable {name!r} was not aggregated")
    ds2 = ds.with_outcome(ds.extra[name], str(name))
    if form == "reduced":
        if ds.zbar is None:
            raise EstimationError("reduced-form falsification needs z aggregates")
        ds2 = ds2.with_treatment(ds.zbar, [f"z_{g}" for g in ds.g_names])
    elif form != "iv":
        raise ValidationError(f"unknown falsification form {form!r}")
    rep = ssiv_estimate(ds2, inference, level=level)
    rep.notes.append(f"falsification test ({form} form) on {name}")
    return rep


def orthogonality_moment(ds: ShockLevelDataset, residuals):
    """``Σ_n s_n g_n ε̄_n`` (one value per instrument)."""
    e = np.asarray(residuals, dtype=float).ravel()
    if e.shape[0] != ds.n:
        raise ValidationError(f"residuals have length {e.shape[0]}, expected {ds.n}")
    m = wdot(ds.g, e, ds.s)
    return float(m[0]) if ds.J == 1 else m


def akm_se(bundle: PanelBundle, controls=None, inference="hc", y=None, x=None):
    """Share-projection standard error for the just-identified single-treatment case.

    ``g̈`` are the coefficients of an e-weighted regression of z⊥ on all
    share columns (no constant). Requires L > N and full-column-rank shares.

    Returns
    -------
    dict
        ``{"coef", "se_akm", "g_ddot"}``
    """
    inference = Inference.parse(inference)
    flat = relabel_panel(bundle)
    obs, sh = flat.observations, flat.shocks
    if sh.g.shape[1] != 1 or (x is None and obs.x.shape[1] != 1):
        raise InapplicableError("the share-projection SE is implemented for one instrument and one treatment")
    L, N = flat.matrix.shape
    if N >= L:
        raise InapplicableError(f"share-projection SE is inapplicable: N = {N} >= L = {L}")
    agg = ShareAggregator(flat, controls)
    yv = obs.y if y is None else obs.column(y)
    xv = obs.x[:, 0] if x is None else obs.column(x)
    z = np.asarray(flat.matrix @ sh.g[:, 0]).ravel()
    V = agg.residualize(np.column_stack([yv, xv, z]))
    yp, xp, zp = V[:, 0], V[:, 1], V[:, 2]
    e = obs.weight
    den = float(wdot(zp, xp, e))
    coef = float(wdot(zp, yp, e)) / den
    eps = yp - coef * xp
    Sd = flat.matrix.toarray()
    sw = np.sqrt(e)
    Q, R, piv = scipy.linalg.qr(sw[:, None] * Sd, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[0] == 0 or np.sum(d > 1e-10 * d[0]) < N:
        raise InapplicableError("share-projection SE is inapplicable: exposure shares are collinear")
    gdd = np.empty(N)
    gdd[piv] = scipy.linalg.solve_triangular(R, Q.T @ (sw * zp))
    Rn = np.asarray(flat.matrix.T @ (e * eps)).ravel()
    u = (Rn * gdd)[:, None]
    kw = {}
    if inference.kind == "cluster":
        kw["clusters"] = sh.label(inference.column)
    elif inference.kind == "hac":
        raise ValidationError("HAC is not available for the share-projection SE")
    meat = score_meat(u, inference.kind, **kw)[0][0, 0]
    return {"coef": coef, "se_akm": float(np.sqrt(meat) / abs(den)), "g_ddot": gdd}
