"""Pure-NumPy splatting kernels.

Reference implementation of the two hot loops (forward evaluation with
spatial derivatives, and the reverse pass to Gaussian parameters). The
compiled extension in ``_kernels_ext.pyx`` implements the same contract
point by point; ``splatfield.kernels`` picks one at import.

Notation used in both backends, per query point x and Gaussian i::

    d_ij  = x_j - mu_ij          r_ij = exp(-2 log_h_ij) = 1 / h_ij**2
    lz_i  = -1/2 sum_j d_ij**2 r_ij          (log influence)
    s_ij  = d lz_i / d x_j = -d_ij r_ij      c_ij = d s_ij / d x_j = -r_ij
    w_i   = softmax(lz)_i  over retained Gaussians   (normalized)
          = exp(lz_i)                                 (unnormalized)
    u_ia  = v_ia - vhat_a      t_ij = s_ij - sum_l w_l s_lj   (normalized)
    u_ia  = v_ia               t_ij = s_ij                    (unnormalized)

    vhat_a  = sum_i w_i v_ia
    J_aj    = sum_i w_i u_ia t_ij
    H_aj    = sum_i w_i u_ia (t_ij**2 + c_ij)

In the normalized case the centred forms follow from d w_i / d x_j =
w_i (s_ij - sbar_j) and d sbar_j / d x_j = Var_w(s_j) + cbar_j; the
constant offsets drop out because sum_i w_i u_ia = 0.
"""

from __future__ import annotations

import math

import numpy as np

UNDERFLOW = 1e-300
_LOG_UNDERFLOW = math.log(UNDERFLOW)
_CHUNK_ELEMS = 1 << 21


def _chunks(K: int, N: int, width: int):
    step = max(1, _CHUNK_ELEMS // max(1, N * width))
    for start in range(0, K, step):
        yield slice(start, min(K, start + step))


def _weights(X, mu, log_h, z_threshold, normalized):
    """Return (w, d, r, lz) for a block of query points."""
    d = X[:, None, :] - mu[None, :, :]
    r = np.exp(-2.0 * log_h)
    lz = -0.5 * np.einsum("kij,kij,ij->ki", d, d, r)
    if z_threshold > 0.0:
        keep = lz >= math.log(z_threshold)
    else:
        keep = np.ones(lz.shape, dtype=bool)
    if not normalized:
        return np.where(keep, np.exp(lz), 0.0), d, r, lz

    empty = ~keep.any(axis=1)
    if empty.any():
        keep[empty] = True
    lzm = np.where(keep, lz, -np.inf)
    top = lzm.max(axis=1, keepdims=True)
    e = np.exp(lzm - top)
    total = e.sum(axis=1, keepdims=True)
    w = e / total

    # raw sum below the underflow floor: snap to the nearest centre
    dead = (top[:, 0] + np.log(total[:, 0])) < _LOG_UNDERFLOW
    if dead.any():
        nearest = np.argmin(np.einsum("kij,kij->ki", d[dead], d[dead]), axis=1)
        w[dead] = 0.0
        w[np.flatnonzero(dead), nearest] = 1.0
    return w, d, r, lz


def _local_terms(w, d, r, values, normalized):
    vhat = w @ values
    s = -d * r[None]
    if normalized:
        u = values[None, :, :] - vhat[:, None, :]
        t = s - np.einsum("ki,kij->kj", w, s)[:, None, :]
    else:
        u = np.broadcast_to(values[None], (w.shape[0],) + values.shape)
        t = s
    return vhat, s, u, t


def forward(mu, log_h, values, X, z_threshold, normalized=True, order=0):
    """Evaluate the splatted field and optionally its spatial derivatives.

    Returns ``(vhat, J, H)`` with shapes (K, p), (K, p, q), (K, p, q);
    ``J`` is None for ``order < 1`` and ``H`` is None for ``order < 2``.
    """
    K, q = X.shape
    N, p = values.shape
    vhat = np.empty((K, p))
    J = np.empty((K, p, q)) if order >= 1 else None
    H = np.empty((K, p, q)) if order >= 2 else None
    for sl in _chunks(K, N, p * q + q):
        w, d, r, _ = _weights(X[sl], mu, log_h, z_threshold, normalized)
        if order == 0:
            vhat[sl] = w @ values
            continue
        vh, s, u, t = _local_terms(w, d, r, values, normalized)
        vhat[sl] = vh
        wu = w[:, :, None] * u
        J[sl] = np.einsum("kia,kij->kaj", wu, t, optimize=True)
        if order >= 2:
            H[sl] = np.einsum("kia,kij->kaj", wu, t * t - r[None], optimize=True)
    return vhat, J, H


def backward(mu, log_h, values, X, z_threshold, normalized, g_v, g_J=None, g_H=None):
    """Pull adjoints of (vhat, J, H) back to (mu, log_h, values).

    ``g_v`` has shape (K, p); ``g_J`` and ``g_H`` are (K, p, q) or None.
    Returns gradients shaped like ``mu``, ``log_h`` and ``values``.
    """
    K, q = X.shape
    N, p = values.shape
    d_mu = np.zeros((N, q))
    d_lh = np.zeros((N, q))
    d_v = np.zeros((N, p))
    for sl in _chunks(K, N, 3 * p * q + 2 * q):
        w, d, r, _ = _weights(X[sl], mu, log_h, z_threshold, normalized)
        gv = g_v[sl]
        if g_J is None and g_H is None:
            if normalized:
                u = values[None, :, :] - (w @ values)[:, None, :]
                w_bar = np.einsum("ka,kia->ki", gv, u)
                lz_bar = w * w_bar
            else:
                lz_bar = w * (gv @ values.T)
            d_v += w.T @ gv
            d_mu += np.einsum("ki,kij->ij", lz_bar, d) * r
            d_lh += np.einsum("ki,kij->ij", lz_bar, d * d) * r
            continue

        _, s, u, t = _local_terms(w, d, r, values, normalized)
        w_bar = np.zeros_like(w)
        u_bar = np.zeros(u.shape)
        t_bar = np.zeros(t.shape)
        c_bar = np.zeros(t.shape)
        if g_H is not None:
            gH = g_H[sl]
            tc = t * t - r[None]
            gHu = np.einsum("kaj,kia->kij", gH, u, optimize=True)
            w_bar += np.einsum("kij,kij->ki", gHu, tc)
            u_bar += np.einsum("kaj,kij->kia", gH, tc, optimize=True)
            t_bar += 2.0 * t * gHu
            c_bar += gHu
        if g_J is not None:
            gJ = g_J[sl]
            gJu = np.einsum("kaj,kia->kij", gJ, u, optimize=True)
            w_bar += np.einsum("kij,kij->ki", gJu, t)
            u_bar += np.einsum("kaj,kij->kia", gJ, t, optimize=True)
            t_bar += gJu
        wc = w[:, :, None]
        u_bar *= wc
        t_bar *= wc
        c_bar *= wc

        d_v += u_bar.sum(axis=0)
        s_bar = t_bar
        if normalized:
            vhat_bar = gv - u_bar.sum(axis=1)
            sm_bar = -t_bar.sum(axis=1)
            w_bar += np.einsum("kj,kij->ki", sm_bar, s)
            s_bar = t_bar + sm_bar[:, None, :] * wc
        else:
            vhat_bar = gv
        w_bar += vhat_bar @ values.T
        d_v += w.T @ vhat_bar
        if normalized:
            lz_bar = w * (w_bar - np.einsum("ki,ki->k", w, w_bar)[:, None])
        else:
            lz_bar = w * w_bar

        d_mu += (np.einsum("ki,kij->ij", lz_bar, d) + s_bar.sum(axis=0)) * r
        d_lh += (
            np.einsum("ki,kij->ij", lz_bar, d * d)
            + 2.0 * np.einsum("kij,kij->ij", s_bar, d)
            + 2.0 * c_bar.sum(axis=0)
        ) * r
    return d_mu, d_lh, d_v
