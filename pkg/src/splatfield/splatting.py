"""Normalized and unnormalized Gaussian-sum predictors.

``predict`` returns the convex combination sum_i w_i(x) v_i with
w_i = z_i / sum_j z_j, where z_i is the axes-aligned Gaussian influence.
Influences below the field's z-threshold are dropped before
normalizing. If every influence at a point is below the threshold the
weights fall back to all raw influences, and if even their sum
underflows (< 1e-300) the value of the nearest centre is returned.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from . import kernels
from ._kernels_py import _weights
from .field import AxesGaussian, GaussianField


def _points(x, q: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, q) if single else x
    if X.shape[1] != q:
        raise ValueError(f"query points have dimension {X.shape[1]}, field has q={q}")
    return X, single


def influence(g: AxesGaussian, x) -> float:
    """exp(-1/2 sum_j (x_j - mu_j)^2 / h_j^2) for a single Gaussian."""
    d = (np.asarray(x, dtype=float) - g.mu) / g.h
    return float(np.exp(-0.5 * np.dot(d, d)))


def weights(field: GaussianField, x) -> np.ndarray:
    """Normalized weights w_i(x); shape (N,) for one point or (K, N)."""
    X, single = _points(x, field.q)
    w, *_ = _weights(X, field.mu, field.log_h, field.z_threshold, True)
    return w[0] if single else w


def predict(field: GaussianField, x) -> np.ndarray:
    """Normalized prediction; shape (p,) for one point or (K, p)."""
    X, single = _points(x, field.q)
    vhat, _, _ = kernels.forward(field.mu, field.log_h, field.values, X, field.z_threshold, True, 0)
    return vhat[0] if single else vhat


def predict_unnormalized(field: GaussianField, x) -> np.ndarray:
    """Plain influence-weighted sum sum_i z_i(x) v_i (the ablation predictor)."""
    X, single = _points(x, field.q)
    vhat, _, _ = kernels.forward(field.mu, field.log_h, field.values, X, field.z_threshold, False, 0)
    return vhat[0] if single else vhat


def influence_matrix(field: GaussianField, points) -> sparse.csr_matrix:
    """Sparse K x N matrix of influences z_i(x_k); entries below the threshold are zero."""
    X, _ = _points(points, field.q)
    inv_h = np.exp(-field.log_h)
    chunk = max(1, (1 << 21) // (field.n * field.q))
    blocks = []
    for start in range(0, X.shape[0], chunk):
        d = (X[start:start + chunk, None, :] - field.mu[None]) * inv_h[None]
        z = np.exp(-0.5 * np.einsum("kij,kij->ki", d, d))
        z[z < field.z_threshold] = 0.0
        blocks.append(sparse.csr_matrix(z))
    return sparse.vstack(blocks, format="csr")


def field_from_points(coords, values, bandwidth: float) -> GaussianField:
    """Static kernel field: one isotropic Gaussian per data point, no cutoff."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    values = np.asarray(values, dtype=float).reshape(coords.shape[0], -1)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return GaussianField(coords, np.full(coords.shape, np.log(bandwidth)), values, 0.0)


def nadaraya_watson(dataset, bandwidth: float, x) -> np.ndarray:
    """Classic Nadaraya-Watson regression with an isotropic Gaussian kernel.

    Computed directly from the data (not through the field kernels):
    sum_k K_h(x - x_k) y_k / sum_k K_h(x - x_k).
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    coords = np.asarray(dataset.coords, dtype=float)
    values = np.asarray(dataset.values, dtype=float)
    X, single = _points(x, coords.shape[1])
    out = np.empty((X.shape[0], values.shape[1]))
    for start in range(0, X.shape[0], 2048):
        diff = X[start:start + 2048, None, :] - coords[None]
        logk = -0.5 * np.einsum("kij,kij->ki", diff, diff) / bandwidth**2
        top = logk.max(axis=1, keepdims=True)
        k = np.exp(logk - top)
        total = k.sum(axis=1, keepdims=True)
        dead = top[:, 0] + np.log(total[:, 0]) < np.log(1e-300)
        out[start:start + 2048] = (k @ values) / total
        if dead.any():
            nearest = np.argmax(logk[dead], axis=1)
            out[start:start + 2048][dead] = values[nearest]
    return out[0] if single else out
