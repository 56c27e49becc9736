"""Independent reference implementations used by the test-suite.

Everything here is deliberately naive: dense matrices, explicit loops and
normal equations solved in 40-digit arithmetic (mpmath). None of it imports
the package's numerical kernels.
"""

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def _m(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return mp.matrix([[mp.mpf(float(v)) for v in row] for row in a])


def _col(v):
    return mp.matrix([mp.mpf(float(x)) for x in np.asarray(v, dtype=float).ravel()])


def _f(M):
    return np.array([[float(M[i, j]) for j in range(M.cols)] for i in range(M.rows)])


def wls_resid(V, W, w):
    """Residuals of each column of V on W with weights w (normal equations)."""
    V = np.asarray(V, dtype=float)
    one = V.ndim == 1
    V = V[:, None] if one else V
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != V.shape[0]:
        W = W.T
    n = V.shape[0]
    Wm, Vm = _m(W), _m(V)
    D = mp.diag([mp.mpf(float(x)) for x in w])
    A = Wm.T * D * Wm
    B = Wm.T * D * Vm
    coef = mp.matrix(W.shape[1], V.shape[1])
    for k in range(V.shape[1]):
        ck = mp.lu_solve(A, B[:, k])
        for i in range(W.shape[1]):
            coef[i, k] = ck[i]
    R = Vm - Wm * coef
    out = _f(R)
    assert out.shape == (n, V.shape[1])
    return out[:, 0] if one else out


def wsum(*arrays, w=None):
    """Σ_i w_i Π arrays_i in high precision."""
    n = len(arrays[0])
    total = mp.mpf(0)
    for i in range(n):
        term = mp.mpf(1) if w is None else mp.mpf(float(w[i]))
        for a in arrays:
            term *= mp.mpf(float(a[i]))
        total += term
    return float(total)


def obs_level_ssiv(S, y, x, g, W, e):
    """Observation-level just-identified SSIV: Σ e z⊥ y⊥ / Σ e z⊥ x⊥."""
    z = np.asarray(S) @ np.asarray(g)
    yp, xp, zp = wls_resid(np.column_stack([y, x, z]), W, e).T
    return wsum(zp, yp, w=e) / wsum(zp, xp, w=e)


def shock_aggregates(S, V, W, e):
    """Direct loops for s_n and v̄_n = Σ_l e_l s_ln v⊥_l / s_n (dropping s_n = 0)."""
    S = np.asarray(S, dtype=float)
    L, N = S.shape
    Vp = wls_resid(V, W, e)
    Vp = Vp[:, None] if Vp.ndim == 1 else Vp
    s = np.array([sum(e[l] * S[l, n] for l in range(L)) for n in range(N)])
    keep = np.nonzero(s > 0)[0]
    bars = np.array([[sum(e[l] * S[l, n] * Vp[l, k] for l in range(L)) / s[n] for k in range(Vp.shape[1])]
                     for n in keep])
    return s[keep], bars, keep


def shock_iv(ybar, xbar, g, q, s):
    """Shock-level just-identified IV with s weights, controls q; returns (β, HC0 SE)."""
    yr, xr, gr = wls_resid(np.column_stack([ybar, xbar, g]), q, s).T
    beta = wsum(gr, yr, w=s) / wsum(gr, xr, w=s)
    eps = yr - beta * xr
    se = np.sqrt(wsum(s, s, eps, eps, gr, gr)) / abs(wsum(gr, xr, w=s))
    return beta, se


def cluster_se(ybar, xbar, g, q, s, clusters):
    yr, xr, gr = wls_resid(np.column_stack([ybar, xbar, g]), q, s).T
    beta = wsum(gr, yr, w=s) / wsum(gr, xr, w=s)
    eps = yr - beta * xr
    labels = sorted(set(clusters))
    C = len(labels)
    meat = 0.0
    for c in labels:
        idx = [i for i, v in enumerate(clusters) if v == c]
        u = sum(s[i] * eps[i] * gr[i] for i in idx)
        meat += u * u
    return beta, np.sqrt(meat * C / (C - 1)) / abs(wsum(gr, xr, w=s))


def akm_se(S, y, x, g, e):
    """Share-projection SE with only a constant control: g̈ from e-weighted lstsq of z⊥ on S."""
    S = np.asarray(S, dtype=float)
    L = S.shape[0]
    one = np.ones((L, 1))
    z = S @ g
    yp, xp, zp = wls_resid(np.column_stack([y, x, z]), one, e).T
    beta = wsum(zp, yp, w=e) / wsum(zp, xp, w=e)
    eps = yp - beta * xp
    gdd = _f(mp.lu_solve(_m(S).T * mp.diag([mp.mpf(float(v)) for v in e]) * _m(S),
                         _m(S).T * _col(np.asarray(e) * zp))).ravel()
    R = S.T @ (np.asarray(e) * eps)
    return beta, np.sqrt(np.sum((R * gdd) ** 2)) / abs(wsum(zp, xp, w=e))


def first_stage_t2(xbar, g, q, s):
    """Squared HC0 t-statistic of the s-weighted first stage x̄ on g given q."""
    xr, gr = wls_resid(np.column_stack([xbar, g]), q, s).T
    pi = wsum(gr, xr, w=s) / wsum(gr, gr, w=s)
    u = xr - pi * gr
    se = np.sqrt(wsum(s, s, u, u, gr, gr)) / wsum(gr, gr, w=s)
    return (pi / se) ** 2


def lm_stat(ybar, xbar, g, q, s, b):
    """Null-imposed score statistic for β = b (single instrument, HC)."""
    yr, xr, gr = wls_resid(np.column_stack([ybar, xbar, g]), q, s).T
    e0 = yr - b * xr
    num = wsum(s, gr, e0)
    den = wsum(s, s, gr, gr, e0, e0)
    return num * num / den


def gmm2_overid(Y, X, G, s):
    """Two-step GMM with HC weight; returns (coef, J statistic). Inputs pre-residualized."""
    Y, X, G, s = map(np.asarray, (Y, X, G, s))
    X = X[:, None] if X.ndim == 1 else X
    Gs = G * s[:, None]
    ZX, ZY, ZZ = Gs.T @ X, Gs.T @ Y, Gs.T @ G
    b1 = np.linalg.solve(ZX.T @ np.linalg.solve(ZZ, ZX), ZX.T @ np.linalg.solve(ZZ, ZY))
    u = Y - X @ b1
    sc = Gs * u[:, None]
    Wt = np.linalg.inv(sc.T @ sc)
    b2 = np.linalg.solve(ZX.T @ Wt @ ZX, ZX.T @ Wt @ ZY)
    m = Gs.T @ (Y - X @ b2)
    return b2, float(m @ Wt @ m)
