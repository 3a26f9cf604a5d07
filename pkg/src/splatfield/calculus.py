"""Closed-form spatial derivatives of the normalized predictor and the
parameter gradient of the training loss.

With s_ij = -(x_j - mu_ij) / h_ij^2 the weight derivative is

    d w_i / d x_j = w_i (s_ij - sum_l w_l s_lj)

so the Jacobian is a weighted covariance between the values and the
per-Gaussian scores; the diagonal second derivative adds the score
variance and the curvature -1/h_ij^2 (see ``_kernels_py`` for the full
forms). Only the Hessian diagonal is provided, which is all a Laplacian
needs.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .field import GaussianField, pack_rows
from .physics import PdeSpec, loss_terms


def _derivs(field: GaussianField, x, order: int, normalized: bool):
    x = np.asarray(x, dtype=float)
    X = x.reshape(1, field.q) if x.ndim <= 1 else x
    out = kernels.forward(field.mu, field.log_h, field.values, X, field.z_threshold, normalized, order)
    return out, x.ndim <= 1


def spatial_jacobian(field: GaussianField, x, normalized: bool = True) -> np.ndarray:
    """(p, q) matrix d vhat_a / d x_j at one point, or (K, p, q) for many."""
    (_, J, _), single = _derivs(field, x, 1, normalized)
    return J[0] if single else J


def spatial_second_diag(field: GaussianField, x, normalized: bool = True) -> np.ndarray:
    """(p, q) matrix d^2 vhat_a / d x_j^2 at one point, or (K, p, q) for many."""
    (_, _, H), single = _derivs(field, x, 2, normalized)
    return H[0] if single else H


def laplacian(field: GaussianField, x, axes=None) -> np.ndarray:
    H = spatial_second_diag(field, x)
    if axes is not None:
        H = H[..., list(axes)]
    return H.sum(axis=-1)


def loss_param_gradient(field: GaussianField, X, Y, pde: PdeSpec | None = None, lam: float = 1.0,
                        mask=None, normalized: bool = True) -> np.ndarray:
    """Gradient of data + lam * PDE loss as a flat parameter vector
    (same layout as ``field.flatten()``)."""
    terms = loss_terms(field, X, Y, pde or PdeSpec.none(), lam, mask, normalized)
    return pack_rows(*terms.grad)
