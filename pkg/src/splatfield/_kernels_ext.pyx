# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled splatting kernels.

Same contract and notation as ``_kernels_py``; the loops run one query
point at a time, scan only centres within reach along the first axis,
and skip Gaussians whose influence falls under the z-threshold as soon
as the partial exponent exceeds the cutoff.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

cdef double LOG_UNDERFLOW = log(1e-300)


cdef Py_ssize_t _bisect(const double[::1] keys, double x, bint right) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] < x or (right and keys[mid] == x):
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _gather(const double[:, ::1] mu, const double[:, ::1] inv_h,
                        const double[:, ::1] X, Py_ssize_t k, double cut2,
                        const Py_ssize_t[::1] order, const double[::1] keys, double reach,
                        bint normalized, Py_ssize_t[::1] idx, double[::1] lz) noexcept nogil:
    """Collect Gaussians with z >= threshold at X[k]. Only centres whose
    first coordinate lies within ``reach`` of the point can qualify, so
    the scan is limited to that window of the sorted ``keys``."""
    cdef Py_ssize_t N = mu.shape[0], q = mu.shape[1]
    cdef Py_ssize_t i, j, o, n = 0, lo = 0, hi = N
    cdef double acc, dd
    cdef bint ok
    if reach < INFINITY:
        lo = _bisect(keys, X[k, 0] - reach, False)
        hi = _bisect(keys, X[k, 0] + reach, True)
    for o in range(lo, hi):
        i = order[o]
        acc = 0.0
        ok = True
        for j in range(q):
            dd = (X[k, j] - mu[i, j]) * inv_h[i, j]
            acc = acc + dd * dd
            if acc > cut2:
                ok = False
                break
        if ok:
            idx[n] = i
            lz[n] = -0.5 * acc
            n += 1
    if n == 0 and normalized:
        for i in range(N):
            acc = 0.0
            for j in range(q):
                dd = (X[k, j] - mu[i, j]) * inv_h[i, j]
                acc = acc + dd * dd
            idx[i] = i
            lz[i] = -0.5 * acc
        n = N
    return n


def _window(mu, inv_h, double cut2):
    """Centre order along the first axis and the largest first-axis reach."""
    mu = np.asarray(mu)
    order = np.argsort(mu[:, 0], kind="stable").astype(np.intp)
    keys = np.ascontiguousarray(mu[order, 0])
    if cut2 == INFINITY:
        return order, keys, INFINITY
    reach = float(np.sqrt(cut2) / np.min(np.asarray(inv_h)[:, 0])) * (1.0 + 1e-12)
    return order, keys, reach


cdef Py_ssize_t _weights(const double[:, ::1] mu, const double[:, ::1] X, Py_ssize_t k,
                         bint normalized, Py_ssize_t n, Py_ssize_t[::1] idx,
                         double[::1] lz, double[::1] w) noexcept nogil:
    """Fill w[:n]; returns the (possibly reduced) active count."""
    cdef Py_ssize_t m, j, i, best
    cdef double top, total, dist, best_dist, dd
    if not normalized:
        for m in range(n):
            w[m] = exp(lz[m])
        return n
    top = -INFINITY
    for m in range(n):
        if lz[m] > top:
            top = lz[m]
    total = 0.0
    for m in range(n):
        w[m] = exp(lz[m] - top)
        total = total + w[m]
    if top + log(total) < LOG_UNDERFLOW:
        best = 0
        best_dist = INFINITY
        for i in range(mu.shape[0]):
            dist = 0.0
            for j in range(mu.shape[1]):
                dd = X[k, j] - mu[i, j]
                dist = dist + dd * dd
            if dist < best_dist:
                best_dist = dist
                best = i
        idx[0] = best
        w[0] = 1.0
        return 1
    for m in range(n):
        w[m] = w[m] / total
    return n


def forward(mu, log_h, values, X, double z_threshold, bint normalized=True, int order=0):
    cdef const double[:, ::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] lh_v = np.ascontiguousarray(log_h, dtype=np.float64)
    cdef const double[:, ::1] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t K = Xv.shape[0], q = Xv.shape[1], N = val.shape[0], p = val.shape[1]
    inv_h_arr = np.exp(-np.asarray(lh_v))
    cdef const double[:, ::1] inv_h = inv_h_arr
    cdef double cut2 = -2.0 * log(z_threshold) if z_threshold > 0.0 else INFINITY
    order_arr, keys_arr, reach_py = _window(mu_v, inv_h, cut2)
    cdef const Py_ssize_t[::1] by_first = order_arr
    cdef const double[::1] keys = keys_arr
    cdef double reach = reach_py

    vhat_arr = np.zeros((K, p))
    J_arr = np.zeros((K, p, q)) if order >= 1 else None
    H_arr = np.zeros((K, p, q)) if order >= 2 else None
    cdef double[:, ::1] vhat = vhat_arr
    cdef double[:, :, ::1] J = J_arr if order >= 1 else np.zeros((1, 1, 1))
    cdef double[:, :, ::1] H = H_arr if order >= 2 else np.zeros((1, 1, 1))

    cdef Py_ssize_t[::1] idx = np.zeros(N, dtype=np.intp)
    cdef double[::1] lz = np.zeros(N)
    cdef double[::1] w = np.zeros(N)
    cdef double[:, ::1] s = np.zeros((N, q))
    cdef double[::1] sbar = np.zeros(q)
    cdef Py_ssize_t k, m, i, j, a, n
    cdef double r, t, u, wm

    with nogil:
        for k in range(K):
            n = _gather(mu_v, inv_h, Xv, k, cut2, by_first, keys, reach, normalized, idx, lz)
            n = _weights(mu_v, Xv, k, normalized, n, idx, lz, w)
            for a in range(p):
                vhat[k, a] = 0.0
            for m in range(n):
                i = idx[m]
                for a in range(p):
                    vhat[k, a] += w[m] * val[i, a]
            if order < 1:
                continue
            for j in range(q):
                sbar[j] = 0.0
            for m in range(n):
                i = idx[m]
                for j in range(q):
                    r = inv_h[i, j] * inv_h[i, j]
                    s[m, j] = -(Xv[k, j] - mu_v[i, j]) * r
                    if normalized:
                        sbar[j] += w[m] * s[m, j]
            for m in range(n):
                i = idx[m]
                wm = w[m]
                for a in range(p):
                    u = val[i, a] - vhat[k, a] if normalized else val[i, a]
                    for j in range(q):
                        t = s[m, j] - sbar[j]
                        J[k, a, j] += wm * u * t
                        if order >= 2:
                            r = inv_h[i, j] * inv_h[i, j]
                            H[k, a, j] += wm * u * (t * t - r)
    return vhat_arr, J_arr, H_arr


def backward(mu, log_h, values, X, double z_threshold, bint normalized, g_v, g_J=None, g_H=None):
    cdef const double[:, ::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] lh_v = np.ascontiguousarray(log_h, dtype=np.float64)
    cdef const double[:, ::1] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t K = Xv.shape[0], q = Xv.shape[1], N = val.shape[0], p = val.shape[1]
    inv_h_arr = np.exp(-np.asarray(lh_v))
    cdef const double[:, ::1] inv_h = inv_h_arr
    cdef double cut2 = -2.0 * log(z_threshold) if z_threshold > 0.0 else INFINITY
    order_arr, keys_arr, reach_py = _window(mu_v, inv_h, cut2)
    cdef const Py_ssize_t[::1] by_first = order_arr
    cdef const double[::1] keys = keys_arr
    cdef double reach = reach_py
    cdef bint has_J = g_J is not None
    cdef bint has_H = g_H is not None
    cdef bint deriv = has_J or has_H

    cdef const double[:, ::1] gv = np.ascontiguousarray(g_v, dtype=np.float64)
    cdef const double[:, :, ::1] gJ = np.ascontiguousarray(g_J, dtype=np.float64) if has_J else np.zeros((1, 1, 1))
    cdef const double[:, :, ::1] gH = np.ascontiguousarray(g_H, dtype=np.float64) if has_H else np.zeros((1, 1, 1))

    d_mu_arr = np.zeros((N, q))
    d_lh_arr = np.zeros((N, q))
    d_v_arr = np.zeros((N, p))
    cdef double[:, ::1] d_mu = d_mu_arr
    cdef double[:, ::1] d_lh = d_lh_arr
    cdef double[:, ::1] d_v = d_v_arr

    cdef Py_ssize_t[::1] idx = np.zeros(N, dtype=np.intp)
    cdef double[::1] lz = np.zeros(N)
    cdef double[::1] w = np.zeros(N)
    cdef double[::1] w_bar = np.zeros(N)
    cdef double[:, ::1] s = np.zeros((N, q))
    cdef double[:, ::1] t_bar = np.zeros((N, q))
    cdef double[:, ::1] c_bar = np.zeros((N, q))
    cdef double[::1] sbar = np.zeros(q)
    cdef double[::1] sm_bar = np.zeros(q)
    cdef double[::1] vhat = np.zeros(p)
    cdef double[::1] vhat_bar = np.zeros(p)
    cdef double[::1] gHu = np.zeros(q)
    cdef double[::1] gJu = np.zeros(q)
    cdef Py_ssize_t k, m, i, j, a, n
    cdef double r, t, u, wm, acc, ub, mean_wbar, lzb, sb, dd

    with nogil:
        for k in range(K):
            n = _gather(mu_v, inv_h, Xv, k, cut2, by_first, keys, reach, normalized, idx, lz)
            n = _weights(mu_v, Xv, k, normalized, n, idx, lz, w)
            for a in range(p):
                vhat[a] = 0.0
                vhat_bar[a] = gv[k, a]
            for m in range(n):
                i = idx[m]
                for a in range(p):
                    vhat[a] += w[m] * val[i, a]
            for j in range(q):
                sbar[j] = 0.0
                sm_bar[j] = 0.0
            for m in range(n):
                i = idx[m]
                w_bar[m] = 0.0
                for j in range(q):
                    r = inv_h[i, j] * inv_h[i, j]
                    s[m, j] = -(Xv[k, j] - mu_v[i, j]) * r
                    t_bar[m, j] = 0.0
                    c_bar[m, j] = 0.0
                    if normalized:
                        sbar[j] += w[m] * s[m, j]

            if deriv:
                for m in range(n):
                    i = idx[m]
                    wm = w[m]
                    for j in range(q):
                        gHu[j] = 0.0
                        gJu[j] = 0.0
                    for a in range(p):
                        u = val[i, a] - vhat[a] if normalized else val[i, a]
                        ub = 0.0
                        for j in range(q):
                            t = s[m, j] - sbar[j]
                            r = inv_h[i, j] * inv_h[i, j]
                            if has_H:
                                acc = gH[k, a, j] * (t * t - r)
                                w_bar[m] += acc * u
                                ub = ub + acc
                                gHu[j] += gH[k, a, j] * u
                            if has_J:
                                acc = gJ[k, a, j] * t
                                w_bar[m] += acc * u
                                ub = ub + acc
                                gJu[j] += gJ[k, a, j] * u
                        ub = ub * wm
                        d_v[i, a] += ub
                        if normalized:
                            vhat_bar[a] -= ub
                    for j in range(q):
                        t = s[m, j] - sbar[j]
                        t_bar[m, j] = wm * (2.0 * t * gHu[j] + gJu[j])
                        c_bar[m, j] = wm * gHu[j]
                        if normalized:
                            sm_bar[j] -= t_bar[m, j]

            mean_wbar = 0.0
            for m in range(n):
                i = idx[m]
                acc = 0.0
                for a in range(p):
                    acc = acc + vhat_bar[a] * val[i, a]
                    d_v[i, a] += w[m] * vhat_bar[a]
                if normalized and deriv:
                    for j in range(q):
                        acc = acc + sm_bar[j] * s[m, j]
                w_bar[m] += acc
                mean_wbar = mean_wbar + w[m] * w_bar[m]
            if not normalized:
                mean_wbar = 0.0

            for m in range(n):
                i = idx[m]
                lzb = w[m] * (w_bar[m] - mean_wbar)
                for j in range(q):
                    r = inv_h[i, j] * inv_h[i, j]
                    dd = Xv[k, j] - mu_v[i, j]
                    sb = t_bar[m, j]
                    if normalized:
                        sb = sb + sm_bar[j] * w[m]
                    d_mu[i, j] += (lzb * dd + sb) * r
                    d_lh[i, j] += (lzb * dd * dd + 2.0 * sb * dd + 2.0 * c_bar[m, j]) * r
    return d_mu_arr, d_lh_arr, d_v_arr
