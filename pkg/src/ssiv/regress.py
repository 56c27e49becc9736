"""Weighted least-squares kernels: residualization, IV with a combination
matrix, and sandwich variance estimators.

Solves go through a pivoted QR factorization. Cross-products are accumulated
in ``np.longdouble`` and returned as float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EstimationError, RankError, ValidationError

RANK_TOL = 1e-10
SINGULAR_TOL = 1e-11


def wdot(A, B, w=None):
    """Return ``A.T @ diag(w) @ B`` accumulated in long double."""
    A = np.asarray(A, dtype=np.longdouble)
    B = np.asarray(B, dtype=np.longdouble)
    if w is not None:
        A = A * np.asarray(w, dtype=np.longdouble).reshape((-1,) + (1,) * (A.ndim - 1))
    return np.asarray(A.T @ B, dtype=np.float64)


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _check_finite(a, names, what):
    bad = ~np.isfinite(a)
    if bad.any():
        col = int(np.nonzero(bad.any(axis=0))[0][0])
        name = names[col] if names is not None else f"column {col}"
        raise ValidationError(f"non-finite value in {what} {name!r}")


def _check_weights(omega, n):
    omega = np.asarray(omega, dtype=float).ravel()
    if omega.shape[0] != n:
        raise ValidationError(f"weights have length {omega.shape[0]}, expected {n}")
    if not np.all(np.isfinite(omega)):
        raise ValidationError("non-finite regression weight")
    if (omega < 0).any():
        raise ValidationError("negative regression weight")
    if omega.sum() <= 0:
        raise ValidationError("regression weights are all zero")
    return omega


@dataclass(frozen=True)
class ResidualizedBlock:
    resid: np.ndarray
    coef: np.ndarray
    rank: int
    dropped: tuple = ()


class Residualizer:
    """Pivoted-QR projector onto the omega-weighted column space of ``W``.

    Factorizes once so that many columns (or many Monte Carlo draws) can be
    residualized cheaply.
    """

    def __init__(self, W, omega, names=None):
        W = _as_2d(W)
        n = W.shape[0]
        self.omega = _check_weights(omega, n)
        _check_finite(W, names, "control")
        self.W = W
        self.names = names
        self.sw = np.sqrt(self.omega)
        p = W.shape[1]
        if p == 0:
            self.rank, self.kept, self.dropped = 0, np.array([], int), ()
            self.Q = np.zeros((n, 0))
            self.R = np.zeros((0, 0))
            return
        Q, R, piv = scipy.linalg.qr(self.sw[:, None] * W, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > RANK_TOL * d[0])) if d[0] > 0 else 0
        self.rank = rank
        self.kept = piv[:rank]
        self.dropped = tuple(int(j) for j in sorted(piv[rank:]))
        self.Q = Q[:, :rank]
        self.R = R[:rank, :rank]

    @property
    def dropped_names(self):
        if self.names is None:
            return [str(j) for j in self.dropped]
        return [self.names[j] for j in self.dropped]

    def _solve(self, V):
        rhs = self.Q.T @ (self.sw[:, None] * V)
        return scipy.linalg.solve_triangular(self.R, rhs)

    def fit(self, V, names=None) -> ResidualizedBlock:
        V = _as_2d(V)
        if V.shape[0] != self.W.shape[0]:
            raise ValidationError("rows of V and W are not aligned")
        _check_finite(V, names, "variable")
        p = self.W.shape[1]
        coef = np.zeros((p, V.shape[1]))
        if self.rank == 0:
            return ResidualizedBlock(V.copy(), coef, 0, self.dropped)
        Wk = self.W[:, self.kept]
        g = self._solve(V)
        resid = np.asarray(
            np.asarray(V, np.longdouble) - np.asarray(Wk, np.longdouble) @ np.asarray(g, np.longdouble),
            dtype=float,
        )
        # one step of iterative refinement
        dg = self._solve(resid)
        g = g + dg
        resid = np.asarray(
            np.asarray(V, np.longdouble) - np.asarray(Wk, np.longdouble) @ np.asarray(g, np.longdouble),
            dtype=float,
        )
        coef[self.kept] = g
        return ResidualizedBlock(resid, coef, self.rank, self.dropped)

    def __call__(self, V):
        V = np.asarray(V, dtype=float)
        out = self.fit(V).resid
        return out[:, 0] if V.ndim == 1 else out


def wls_residualize(V, W, omega, v_names=None, w_names=None) -> ResidualizedBlock:
    """Residualize the columns of ``V`` on ``W`` by omega-weighted least squares.

    Parameters
    ----------
    V : array_like, shape (n,) or (n, k)
        Variables to residualize.
    W : array_like, shape (n, p)
        Controls. Collinear columns are dropped (reported in ``dropped``).
    omega : array_like, shape (n,)
        Nonnegative weights with positive sum.

    Returns
    -------
    ResidualizedBlock
        ``resid`` has the shape of ``V`` promoted to 2-D; ``coef`` is (p, k)
        with zero rows for dropped controls.
    """
    return Residualizer(W, omega, w_names).fit(V, v_names)


@dataclass(frozen=True)
class IvFit:
    coef: np.ndarray
    resid: np.ndarray
    zx: np.ndarray  # Z' Omega X, shape (J, K)
    c: np.ndarray  # combination matrix, shape (K, J)
    Z: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)

    @property
    def bread(self):
        return self.c @ self.zx

    @property
    def effective_instruments(self):
        return self.Z @ self.c.T


def tsls_combination(X, Z, omega):
    """``c = X' Omega Z (Z' Omega Z)^-1`` for two-stage least squares."""
    zz = wdot(Z, Z, omega)
    xz = wdot(X, Z, omega)
    return _robust_solve(zz, xz.T).T


def _robust_solve(A, B):
    """Solve ``A x = B`` for symmetric PSD ``A`` with a pivoted-QR fallback."""
    try:
        return scipy.linalg.solve(A, B, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(A, B, rcond=None)[0]


def iv_fit(y, X, Z, omega, c=None) -> IvFit:
    """Weighted IV estimate ``(c Z'ΩX)^-1 c Z'Ωy``.

    Parameters
    ----------
    y : array_like, shape (n,)
    X : array_like, shape (n, K)
        Regressors, already residualized on any controls.
    Z : array_like, shape (n, J)
        Instruments, J >= K.
    omega : array_like, shape (n,)
        Regression weights.
    c : array_like, shape (K, J), optional
        Instrument combination. Identity when J == K, two-stage least
        squares otherwise.

    Returns
    -------
    IvFit
    """
    y = np.asarray(y, dtype=float).ravel()
    X = _as_2d(X)
    Z = _as_2d(Z)
    n = y.shape[0]
    if X.shape[0] != n or Z.shape[0] != n:
        raise ValidationError("y, X and Z must have the same number of rows")
    omega = _check_weights(omega, n)
    K, J = X.shape[1], Z.shape[1]
    if J < K:
        raise EstimationError(f"fewer instruments ({J}) than regressors ({K})")
    if c is None:
        c = np.eye(K) if J == K else tsls_combination(X, Z, omega)
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape != (K, J):
        raise ValidationError(f"combination matrix has shape {c.shape}, expected {(K, J)}")
    zx = wdot(Z, X, omega)
    A = c @ zx
    Zc = Z @ c.T
    d1 = np.sqrt(wdot(Zc**2, np.ones(n), omega))
    d2 = np.sqrt(wdot(X**2, np.ones(n), omega))
    if np.any(d1 == 0) or np.any(d2 == 0):
        raise RankError("instrument or regressor is identically zero", float("inf"))
    sv = np.linalg.svd(A / np.outer(d1, d2), compute_uv=False)
    if sv[-1] < SINGULAR_TOL * max(sv[0], 1.0):
        cond = sv[0] / sv[-1] if sv[-1] > 0 else float("inf")
        raise RankError("first stage is singular at machine precision", cond)
    coef = np.linalg.solve(A, c @ wdot(Z, y, omega))
    resid = y - X @ coef
    return IvFit(coef, resid, zx, c, Z, X, omega)


@dataclass(frozen=True)
class VcovEstimate:
    matrix: np.ndarray
    mode: str
    n_clusters: int | None = None
    bandwidth: int | None = None
    factor: float = 1.0

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))


def _hac_pairs(order, groups, bandwidth):
    """Index pairs (i, j, lag) with lag in 1..bandwidth, same group."""
    order = np.asarray(order, dtype=float)
    if not np.all(order == np.round(order)):
        raise ValidationError("HAC ordering values must be integers")
    order = order.astype(np.int64)
    groups = np.zeros(len(order), dtype=np.int64) if groups is None else np.unique(groups, return_inverse=True)[1]
    index = {}
    for i, key in enumerate(zip(groups.tolist(), order.tolist())):
        if key in index:
            raise ValidationError("HAC ordering values must be unique within each group")
        index[key] = i
    pairs = []
    for i, (g, t) in enumerate(zip(groups.tolist(), order.tolist())):
        for r in range(1, bandwidth + 1):
            j = index.get((g, t + r))
            if j is not None:
                pairs.append((i, j, r))
    return pairs


def score_meat(u, mode="hc", clusters=None, bandwidth=None, order=None, groups=None):
    """Meat matrix from per-unit scores ``u`` (n, K).

    Returns ``(meat, n_clusters, factor)``.
    """
    u = _as_2d(u)
    n = u.shape[0]
    if mode == "hc":
        return wdot(u, u), None, 1.0
    if mode == "cluster":
        if clusters is None:
            raise ValidationError("cluster mode requires cluster labels")
        clusters = np.asarray(clusters)
        if clusters.shape[0] != n:
            raise ValidationError("cluster labels must cover every row")
        codes = np.unique(clusters, return_inverse=True)[1]
        C = int(codes.max()) + 1 if n else 0
        if C < 2:
            raise EstimationError("cluster-robust variance needs at least two clusters")
        U = np.zeros((C, u.shape[1]), dtype=np.longdouble)
        np.add.at(U, codes, u.astype(np.longdouble))
        factor = C / (C - 1)
        return factor * np.asarray(U.T @ U, dtype=float), C, factor
    if mode == "hac":
        if order is None:
            raise ValidationError("HAC mode requires an ordering column")
        B = int(bandwidth if bandwidth is not None else 0)
        if B < 0 or B >= n:
            raise ValidationError(f"HAC bandwidth {B} must lie in [0, {n})")
        meat = wdot(u, u)
        for i, j, r in _hac_pairs(order, groups, B):
            k = 1.0 - r / (B + 1.0)
            o = np.outer(u[i], u[j])
            meat = meat + k * (o + o.T)
        return meat, None, 1.0
    raise ValidationError(f"unknown variance mode {mode!r}")


def sandwich_vcov(fit: IvFit, mode="hc", clusters=None, bandwidth=None, order=None, groups=None) -> VcovEstimate:
    """Sandwich variance of an :class:`IvFit`.

    ``mode`` is ``"hc"`` (HC0), ``"cluster"`` (with ``clusters`` labels and
    factor C/(C-1)) or ``"hac"`` (Bartlett kernel over ``order`` within
    ``groups``, weights 1 - r/(B+1)).
    """
    u = (fit.omega * fit.resid)[:, None] * fit.effective_instruments
    meat, C, factor = score_meat(u, mode, clusters, bandwidth, order, groups)
    Ainv = np.linalg.inv(fit.bread)
    V = Ainv @ meat @ Ainv.T
    V = 0.5 * (V + V.T)
    return VcovEstimate(V, mode, C, bandwidth if mode == "hac" else None, factor)
