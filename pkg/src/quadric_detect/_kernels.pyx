# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot loops in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan, floor, sqrt, fabs, isinf, INFINITY, M_PI

cnp.import_array()

cdef enum:
    VOTED = 0
    ILL_CONDITIONED = 1
    GATE_REJECTED = 2


cdef inline void _eval(const double[::1] q, double x, double y, double z,
                       double* f, double* g) noexcept nogil:
    f[0] = (q[0] * x * x + q[1] * y * y + q[2] * z * z
            + 2.0 * (q[3] * x * y + q[4] * x * z + q[5] * y * z
                     + q[6] * x + q[7] * y + q[8] * z) + q[9])
    g[0] = 2.0 * (q[0] * x + q[3] * y + q[4] * z + q[6])
    g[1] = 2.0 * (q[3] * x + q[1] * y + q[5] * z + q[7])
    g[2] = 2.0 * (q[4] * x + q[5] * y + q[2] * z + q[8])


def vote_candidates(p, mu, X, N, double weight, double rhs_scale, bint common_scale,
                    double tau_n, double lambda_scale, Py_ssize_t bin_count,
                    double cond_tol):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Nv = np.ascontiguousarray(N, dtype=np.float64)
    cdef Py_ssize_t k = Xv.shape[0], i, b
    num_a = np.zeros(k)
    den_a = np.zeros(k)
    bins_a = np.full(k, -1, dtype=np.int64)
    status_a = np.full(k, GATE_REJECTED, dtype=np.int8)
    cdef double[::1] num = num_a
    cdef double[::1] den = den_a
    cdef long long[::1] bins = bins_a
    cdef signed char[::1] status = status_a
    cdef double fp, fm, gp[3], gm[3], t_p[3], t_m[3], nx, ny, nz, dp, dm
    cdef double w2 = weight * weight, a, d, lam, g0, g1, g2, gn, dot, theta
    cdef double tol2 = cond_tol * cond_tol
    with nogil:
        for i in range(k):
            _eval(pv, Xv[i, 0], Xv[i, 1], Xv[i, 2], &fp, gp)
            _eval(mv, Xv[i, 0], Xv[i, 1], Xv[i, 2], &fm, gm)
            nx = Nv[i, 0]; ny = Nv[i, 1]; nz = Nv[i, 2]
            if common_scale:
                a = -fm * fp + w2 * (gm[0] * (rhs_scale * nx - gp[0])
                                     + gm[1] * (rhs_scale * ny - gp[1])
                                     + gm[2] * (rhs_scale * nz - gp[2]))
                d = fm * fm + w2 * (gm[0] * gm[0] + gm[1] * gm[1] + gm[2] * gm[2])
            else:
                dp = nx * gp[0] + ny * gp[1] + nz * gp[2]
                dm = nx * gm[0] + ny * gm[1] + nz * gm[2]
                t_p[0] = gp[0] - dp * nx; t_p[1] = gp[1] - dp * ny; t_p[2] = gp[2] - dp * nz
                t_m[0] = gm[0] - dm * nx; t_m[1] = gm[1] - dm * ny; t_m[2] = gm[2] - dm * nz
                a = -(fm * fp + w2 * (t_m[0] * t_p[0] + t_m[1] * t_p[1] + t_m[2] * t_p[2]))
                d = fm * fm + w2 * (t_m[0] * t_m[0] + t_m[1] * t_m[1] + t_m[2] * t_m[2])
            if d < tol2:
                status[i] = ILL_CONDITIONED
                continue
            num[i] = a
            den[i] = d
            lam = a / d
            g0 = gp[0] + lam * gm[0]
            g1 = gp[1] + lam * gm[1]
            g2 = gp[2] + lam * gm[2]
            gn = sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            dot = g0 * nx + g1 * ny + g2 * nz
            if gn < 1e-12 or not (dot > tau_n * gn):
                continue
            status[i] = VOTED
            theta = atan(lam / lambda_scale)
            b = <Py_ssize_t>floor((theta + M_PI / 2) / M_PI * bin_count)
            if b < 0:
                b = 0
            elif b >= bin_count:
                b = bin_count - 1
            bins[i] = b
    return num_a, den_a, bins_a, status_a


def inlier_mask(q, X, N, double tau, double tau_n):
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Nv = np.ascontiguousarray(N, dtype=np.float64)
    cdef Py_ssize_t k = Xv.shape[0], i
    out_a = np.zeros(k, dtype=bool)
    cdef cnp.npy_bool[::1] out = out_a
    cdef double f, g[3], gn, dot
    with nogil:
        for i in range(k):
            _eval(qv, Xv[i, 0], Xv[i, 1], Xv[i, 2], &f, g)
            if not (fabs(f) < tau):
                continue
            gn = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
            if gn < 1e-12:
                continue
            dot = fabs(g[0] * Nv[i, 0] + g[1] * Nv[i, 1] + g[2] * Nv[i, 2])
            out[i] = dot > tau_n * gn
    return out_a


cdef inline bint _project(const double[::1] q, double* x, double tol,
                          int max_iter) noexcept nogil:
    cdef double f, g[3], gg, s
    cdef int it
    for it in range(max_iter):
        _eval(q, x[0], x[1], x[2], &f, g)
        if fabs(f) < tol:
            return True
        gg = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
        if gg <= 1e-30:
            return False
        s = f / gg
        x[0] -= s * g[0]
        x[1] -= s * g[1]
        x[2] -= s * g[2]
    _eval(q, x[0], x[1], x[2], &f, g)
    return fabs(f) < tol


cdef inline void _secular(const double* lam, const double* b, double c, const double* x,
                         const double* K, double t, double* y, double* f,
                         double* df) noexcept nogil:
    cdef double d
    cdef int j
    f[0] = c
    df[0] = 0.0
    for j in range(3):
        d = 1.0 + t * lam[j]
        y[j] = (x[j] - t * b[j]) / d
        f[0] += lam[j] * y[j] * y[j] + 2.0 * b[j] * y[j]
        df[0] -= 2.0 * K[j] * K[j] / (d * d * d)


def foot_points(qd, X, double tol, int max_iter):
    cdef const double[::1] qv = np.ascontiguousarray(qd, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t k = Xv.shape[0], i
    Y_a = np.empty((k, 3), dtype=np.float64)
    ok_a = np.zeros(k, dtype=bool)
    cdef double[:, ::1] Y = Y_a
    cdef cnp.npy_bool[::1] ok = ok_a
    cdef double lam[3], b[3], x[3], K[3], y[3]
    cdef double c = qv[9], lo0, hi0, lo, hi, t, tt, tn, f, df, step
    cdef int j, it
    for j in range(3):
        lam[j] = qv[j]
        b[j] = qv[6 + j]
    lo0 = -1.0 / max(lam[0], lam[1], lam[2]) if max(lam[0], lam[1], lam[2]) > 0 else -INFINITY
    hi0 = -1.0 / min(lam[0], lam[1], lam[2]) if min(lam[0], lam[1], lam[2]) < 0 else INFINITY
    with nogil:
        for i in range(k):
            for j in range(3):
                x[j] = Xv[i, j]
                K[j] = lam[j] * x[j] + b[j]
            lo = lo0
            hi = hi0
            _secular(lam, b, c, x, K, 0.0, y, &f, &df)
            if f > 0:
                lo = 0.0
            elif f < 0:
                hi = 0.0
            else:
                lo = 0.0
                hi = 0.0
            step = 1.0
            for it in range(200):
                if isinf(hi):
                    tt = step
                    _secular(lam, b, c, x, K, tt, y, &f, &df)
                    if f < 0:
                        hi = tt
                    else:
                        lo = tt
                elif isinf(lo):
                    tt = -step
                    _secular(lam, b, c, x, K, tt, y, &f, &df)
                    if f > 0:
                        lo = tt
                    else:
                        hi = tt
                else:
                    break
                step *= 2.0
            if isinf(lo) or isinf(hi):
                y[0] = x[0]; y[1] = x[1]; y[2] = x[2]
            else:
                t = 0.5 * (lo + hi)
                for it in range(max_iter + 50):
                    if not hi > lo:
                        break
                    _secular(lam, b, c, x, K, t, y, &f, &df)
                    if f > 0:
                        lo = t
                    elif f < 0:
                        hi = t
                    if fabs(f) < 1e-3 * tol or hi - lo <= 4e-16 * max(1.0, -lo, hi):
                        break
                    tn = t - f / df if df < 0 else lo
                    if not (tn > lo and tn < hi):
                        tn = 0.5 * (lo + hi)
                    t = tn
                _secular(lam, b, c, x, K, t, y, &f, &df)
            ok[i] = _project(qv, y, tol, max_iter)
            Y[i, 0] = y[0]; Y[i, 1] = y[1]; Y[i, 2] = y[2]
    return Y_a, ok_a
