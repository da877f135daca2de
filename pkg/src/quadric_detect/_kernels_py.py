"""Pure NumPy implementations of the hot loops (fallback for ``_kernels``).

Both backends share signatures and semantics; see :mod:`quadric_detect.kernels`.
"""
import numpy as np

VOTED, ILL_CONDITIONED, GATE_REJECTED = 0, 1, 2


def _eval(q, X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    f = (q[0] * x * x + q[1] * y * y + q[2] * z * z
         + 2.0 * (q[3] * x * y + q[4] * x * z + q[5] * y * z + q[6] * x + q[7] * y + q[8] * z)
         + q[9])
    g = np.empty_like(X)
    g[:, 0] = 2.0 * (q[0] * x + q[3] * y + q[4] * z + q[6])
    g[:, 1] = 2.0 * (q[3] * x + q[1] * y + q[5] * z + q[7])
    g[:, 2] = 2.0 * (q[4] * x + q[5] * y + q[2] * z + q[8])
    return f, g


def vote_candidates(p, mu, X, N, weight, rhs_scale, common_scale, tau_n,
                    lambda_scale, bin_count, cond_tol):
    """Per-candidate closed-form lambda terms, normal gate and accumulator bin.

    Returns ``(num, den, bins, status)`` with ``lambda = num / den``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    N = np.ascontiguousarray(N, dtype=float)
    fp, gp = _eval(p, X)
    fm, gm = _eval(mu, X)
    w2 = weight * weight
    if common_scale:
        resid = rhs_scale * N - gp
        num = -fm * fp + w2 * np.einsum("ij,ij->i", gm, resid)
        den = fm * fm + w2 * np.einsum("ij,ij->i", gm, gm)
    else:
        tp = gp - np.einsum("ij,ij->i", N, gp)[:, None] * N
        tm = gm - np.einsum("ij,ij->i", N, gm)[:, None] * N
        num = -(fm * fp + w2 * np.einsum("ij,ij->i", tm, tp))
        den = fm * fm + w2 * np.einsum("ij,ij->i", tm, tm)

    status = np.full(len(X), GATE_REJECTED, dtype=np.int8)
    bins = np.full(len(X), -1, dtype=np.int64)
    ok = den >= cond_tol * cond_tol
    status[~ok] = ILL_CONDITIONED
    lam = np.zeros(len(X))
    lam[ok] = num[ok] / den[ok]
    g = gp + lam[:, None] * gm
    gn = np.sqrt(np.einsum("ij,ij->i", g, g))
    dot = np.einsum("ij,ij->i", g, N)
    gate = ok & (gn >= 1e-12) & (dot > tau_n * gn)
    status[gate] = VOTED
    theta = np.arctan(lam[gate] / lambda_scale)
    b = np.floor((theta + np.pi / 2) / np.pi * bin_count).astype(np.int64)
    bins[gate] = np.clip(b, 0, bin_count - 1)
    num = np.where(ok, num, 0.0)
    den = np.where(ok, den, 0.0)
    return num, den, bins, status


def inlier_mask(q, X, N, tau, tau_n):
    """Points with ``|f| < tau`` and ``|n . grad/|grad|| > tau_n``."""
    X = np.ascontiguousarray(X, dtype=float)
    f, g = _eval(q, X)
    gn = np.sqrt(np.einsum("ij,ij->i", g, g))
    dot = np.abs(np.einsum("ij,ij->i", g, N))
    return (np.abs(f) < tau) & (gn >= 1e-12) & (dot > tau_n * gn)


def _project(q, X, tol, max_iter):
    x = X.copy()
    for _ in range(max_iter):
        f, g = _eval(q, x)
        active = np.abs(f) >= tol
        if not active.any():
            break
        gg = np.einsum("ij,ij->i", g, g)
        move = active & (gg > 1e-30)
        if not move.any():
            break
        x[move] -= (f[move] / gg[move])[:, None] * g[move]
    return x, np.abs(_eval(q, x)[0]) < tol


def _secular(lam, b, c, X, K, t):
    d = 1.0 + t[:, None] * lam
    y = (X - t[:, None] * b) / d
    f = np.sum(lam * y * y + 2.0 * b * y, axis=1) + c
    df = -2.0 * np.sum(K * K / (d * d * d), axis=1)
    return y, f, df


def foot_points(qd, X, tol, max_iter):
    """Closest points on an axis-aligned quadric (no cross terms in ``qd``).

    The foot point of ``x`` is ``y(t) = (I + tA)^-1 (x - t b)`` for the
    multiplier ``t`` solving ``f(y(t)) = 0`` on the interval where ``I + tA``
    is positive definite.  ``f(y(t))`` is strictly decreasing there, so a
    bracketed Newton iteration finds the global minimizer.  Rows without a
    sign change (the singular hard case) fall back to gradient projection.
    Returns ``(Y, converged)``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    n = len(X)
    lam, b, c = qd[0:3], qd[6:9], qd[9]
    K = X * lam + b
    lo = np.full(n, -1.0 / lam.max() if lam.max() > 0 else -np.inf)
    hi = np.full(n, -1.0 / lam.min() if lam.min() < 0 else np.inf)
    _, f, _ = _secular(lam, b, c, X, K, np.zeros(n))
    lo = np.where(f > 0, 0.0, lo)
    hi = np.where(f < 0, 0.0, hi)
    lo[f == 0] = hi[f == 0] = 0.0

    step = 1.0
    for _ in range(200):
        open_hi, open_lo = np.isinf(hi), np.isinf(lo)
        if not (open_hi.any() or open_lo.any()):
            break
        tt = np.where(open_hi, step, np.where(open_lo, -step, 0.0))
        _, ft, _ = _secular(lam, b, c, X, K, tt)
        hi = np.where(open_hi & (ft < 0) | open_lo & (ft <= 0), tt, hi)
        lo = np.where(open_lo & (ft > 0) | open_hi & (ft >= 0), tt, lo)
        step *= 2.0
    fallback = np.isinf(lo) | np.isinf(hi)
    lo[fallback] = hi[fallback] = 0.0

    t = 0.5 * (lo + hi)
    active = hi > lo
    for _ in range(max_iter + 50):
        if not active.any():
            break
        _, f, df = _secular(lam, b, c, X, K, t)
        lo = np.where(active & (f > 0), t, lo)
        hi = np.where(active & (f < 0), t, hi)
        active &= ~((np.abs(f) < 1e-3 * tol)
                    | (hi - lo <= 4e-16 * np.maximum(1.0, np.maximum(-lo, hi))))
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - f / df
        tn = np.where((df < 0) & (tn > lo) & (tn < hi), tn, 0.5 * (lo + hi))
        t = np.where(active, tn, t)
    y = _secular(lam, b, c, X, K, t)[0]
    y[fallback] = X[fallback]
    return _project(qd, y, tol, max_iter)
