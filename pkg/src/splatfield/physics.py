"""PDE residuals on a splatted field and the composite training loss.

Residuals are assembled from the field value, its spatial Jacobian and
the diagonal of its Hessian, all evaluated in closed form by the kernels.
Equations are in dimensionless form with the modified pressure, so
neither density nor gravity appears.

Supported residual families (``PdeSpec.kind``):

``steady_ns2d``
    (u . grad) u + grad p - (1/Re) lap u = 0 and div u = 0, q = 2.
``unsteady_ns``
    as above plus du/dt, with 2 or 3 spatial axes and a time axis.
``burgers``
    u_t + u u_x - nu u_xx = 0, q = 2 (x, t).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .field import GaussianField


class LayoutError(ValueError):
    """Field or dataset layout does not match the PDE specification."""


class NonFiniteLoss(FloatingPointError):
    """A loss term evaluated to inf or nan."""

    def __init__(self, term: str, epoch: int | None = None):
        self.term = term
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite {term} loss{where}")


@dataclass(frozen=True)
class PdeSpec:
    kind: str = "none"
    re: float | None = None
    nu: float | None = None
    velocity: tuple[int, ...] = ()
    pressure: int | None = None
    space: tuple[int, ...] = ()
    time: int | None = None

    KINDS = ("none", "steady_ns2d", "unsteady_ns", "burgers")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise LayoutError(f"unknown PDE kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind in ("steady_ns2d", "unsteady_ns"):
            if self.re is None or not self.re > 0:
                raise LayoutError("Navier-Stokes residuals need a positive Reynolds number")
            if len(self.velocity) != len(self.space) or self.pressure is None:
                raise LayoutError("velocity channels must pair with spatial axes and a pressure channel")
        if self.kind == "unsteady_ns" and self.time is None:
            raise LayoutError("unsteady Navier-Stokes needs a time axis")
        if self.kind == "burgers":
            if self.nu is None or self.nu < 0:
                raise LayoutError("Burgers residual needs a non-negative viscosity")
            if len(self.velocity) != 1 or len(self.space) != 1 or self.time is None:
                raise LayoutError("Burgers layout is one velocity channel, one space axis and time")

    @classmethod
    def none(cls) -> "PdeSpec":
        return cls("none")

    @classmethod
    def steady_ns2d(cls, re: float) -> "PdeSpec":
        return cls("steady_ns2d", re=float(re), velocity=(0, 1), pressure=2, space=(0, 1))

    @classmethod
    def unsteady_ns(cls, re: float, spatial_dims: int = 3) -> "PdeSpec":
        if spatial_dims not in (2, 3):
            raise LayoutError("unsteady Navier-Stokes supports 2 or 3 spatial dimensions")
        axes = tuple(range(spatial_dims))
        return cls("unsteady_ns", re=float(re), velocity=axes, pressure=spatial_dims,
                   space=axes, time=spatial_dims)

    @classmethod
    def burgers(cls, nu: float) -> "PdeSpec":
        return cls("burgers", nu=float(nu), velocity=(0,), space=(0,), time=1)

    @property
    def active(self) -> bool:
        return self.kind != "none"

    @property
    def n_residuals(self) -> int:
        if self.kind == "none":
            return 0
        if self.kind == "burgers":
            return 1
        return len(self.velocity) + 1

    @property
    def required_q(self) -> int | None:
        if self.kind == "none":
            return None
        return len(self.space) + (self.time is not None)

    def check(self, q: int, p: int) -> None:
        if self.kind == "none":
            return
        if q != self.required_q:
            raise LayoutError(f"{self.kind} needs q={self.required_q}, field has q={q}")
        channels = list(self.velocity) + ([self.pressure] if self.pressure is not None else [])
        if max(channels) >= p:
            raise LayoutError(f"{self.kind} uses value channel {max(channels)}, field has p={p}")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PdeSpec":
        d = dict(d)
        for key in ("velocity", "space"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


# -- residual algebra on (vhat, J, H) -----------------------------------------

def residuals_from_derivatives(spec: PdeSpec, vhat, J, H) -> np.ndarray:
    """Residual matrix (K, M) from value (K,p), Jacobian and Hessian diagonal (K,p,q)."""
    K = vhat.shape[0]
    if spec.kind == "none":
        return np.zeros((K, 0))
    if spec.kind == "burgers":
        u, x, t = spec.velocity[0], spec.space[0], spec.time
        r = J[:, u, t] + vhat[:, u] * J[:, u, x] - spec.nu * H[:, u, x]
        return r[:, None]
    vel, space = spec.velocity, spec.space
    out = np.empty((K, len(vel) + 1))
    for a, (ca, xa) in enumerate(zip(vel, space)):
        r = J[:, spec.pressure, xa].copy()
        if spec.time is not None:
            r += J[:, ca, spec.time]
        for cb, xb in zip(vel, space):
            r += vhat[:, cb] * J[:, ca, xb] - H[:, ca, xb] / spec.re
        out[:, a] = r
    out[:, -1] = sum(J[:, cb, xb] for cb, xb in zip(vel, space))
    return out


def residual_adjoint(spec: PdeSpec, vhat, J, r_bar):
    """Pull residual adjoints (K, M) back to adjoints of (vhat, J, H)."""
    g_v = np.zeros_like(vhat)
    g_J = np.zeros_like(J)
    g_H = np.zeros_like(J)
    if spec.kind == "none":
        return g_v, g_J, g_H
    if spec.kind == "burgers":
        u, x, t = spec.velocity[0], spec.space[0], spec.time
        rb = r_bar[:, 0]
        g_J[:, u, t] += rb
        g_J[:, u, x] += rb * vhat[:, u]
        g_v[:, u] += rb * J[:, u, x]
        g_H[:, u, x] -= rb * spec.nu
        return g_v, g_J, g_H
    vel, space = spec.velocity, spec.space
    for a, (ca, xa) in enumerate(zip(vel, space)):
        rb = r_bar[:, a]
        g_J[:, spec.pressure, xa] += rb
        if spec.time is not None:
            g_J[:, ca, spec.time] += rb
        for cb, xb in zip(vel, space):
            g_v[:, cb] += rb * J[:, ca, xb]
            g_J[:, ca, xb] += rb * vhat[:, cb]
            g_H[:, ca, xb] -= rb / spec.re
    for cb, xb in zip(vel, space):
        g_J[:, cb, xb] += r_bar[:, -1]
    return g_v, g_J, g_H


# -- public residual operators -------------------------------------------------

def _eval(field: GaussianField, X, order: int, normalized: bool = True):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return kernels.forward(field.mu, field.log_h, field.values, X, field.z_threshold, normalized, order)


def residuals(field: GaussianField, X, spec: PdeSpec, normalized: bool = True) -> np.ndarray:
    """Residual matrix (K, M) at points X for any PDE family."""
    spec.check(field.q, field.p)
    if not spec.active:
        return np.zeros((np.atleast_2d(X).shape[0], 0))
    vhat, J, H = _eval(field, X, 2, normalized)
    return residuals_from_derivatives(spec, vhat, J, H)


def ns_residual(field: GaussianField, x, spec: PdeSpec) -> np.ndarray:
    """Momentum residuals followed by continuity, at one point (M,) or many (K, M)."""
    if spec.kind not in ("steady_ns2d", "unsteady_ns"):
        raise LayoutError(f"ns_residual needs a Navier-Stokes spec, got {spec.kind!r}")
    x = np.asarray(x, dtype=float)
    out = residuals(field, x, spec)
    return out[0] if x.ndim == 1 else out


def burgers_residual(field: GaussianField, x, spec: PdeSpec) -> np.ndarray:
    if spec.kind != "burgers":
        raise LayoutError(f"burgers_residual needs a Burgers spec, got {spec.kind!r}")
    x = np.asarray(x, dtype=float)
    out = residuals(field, x, spec)
    return out[0] if x.ndim == 1 else out


# -- losses ------------------------------------------------------------------------

def _mask(mask, p: int) -> np.ndarray:
    if mask is None:
        return np.ones(p)
    m = np.asarray(mask, dtype=float)
    if m.shape != (p,) or not np.all((m == 0) | (m == 1)):
        raise LayoutError(f"mask must be a length-{p} vector of 0/1 entries")
    return m


def data_loss(field: GaussianField, X, Y, mask=None, normalized: bool = True) -> float:
    """Mean over points of the squared masked error norm."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m = _mask(mask, field.p)
    vhat, _, _ = _eval(field, X, 0, normalized)
    return float(np.mean(np.sum((m * (vhat - Y)) ** 2, axis=1)))


def pde_loss(field: GaussianField, X, spec: PdeSpec, normalized: bool = True) -> float:
    """Mean over collocation points of the summed squared residuals."""
    if not spec.active:
        raise LayoutError("pde_loss needs an active PDE spec")
    r = residuals(field, X, spec, normalized)
    return float(np.mean(np.sum(r * r, axis=1)))


@dataclass
class LossTerms:
    total: float
    data: float
    pde: float
    point_losses: np.ndarray
    grad: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


def loss_terms(field: GaussianField, X, Y, spec: PdeSpec, lam: float = 1.0, mask=None,
               normalized: bool = True, with_grad: bool = True) -> LossTerms:
    """Data + lam * PDE loss over a batch, per-point totals and (optionally) the
    gradient with respect to (mu, log_h, values).

    The PDE residual is penalized at the data points themselves.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    K = X.shape[0]
    spec.check(field.q, field.p)
    m = _mask(mask, field.p)
    use_pde = spec.active
    order = 2 if use_pde else 0
    vhat, J, H = _eval(field, X, order, normalized)

    # overflow shows up as inf in the returned terms; callers check for it
    with np.errstate(over="ignore", invalid="ignore"):
        err = m * (vhat - Y)
        data_pt = np.sum(err * err, axis=1)
        if use_pde:
            r = residuals_from_derivatives(spec, vhat, J, H)
            pde_pt = np.sum(r * r, axis=1)
        else:
            r = None
            pde_pt = np.zeros(K)
        data, pde = float(data_pt.mean()), float(pde_pt.mean())
        total = data + lam * pde
        point = data_pt + lam * pde_pt
    if not with_grad:
        return LossTerms(total, data, pde, point)

    g_v = (2.0 / K) * m * err
    g_J = g_H = None
    if use_pde and lam != 0.0:
        pv, g_J, g_H = residual_adjoint(spec, vhat, J, (2.0 * lam / K) * r)
        g_v = g_v + pv
    grad = kernels.backward(field.mu, field.log_h, field.values, X, field.z_threshold,
                            normalized, g_v, g_J, g_H)
    return LossTerms(total, data, pde, point, grad)


def total_loss(field: GaussianField, X, Y, spec: PdeSpec, lam: float = 1.0, mask=None,
               normalized: bool = True) -> tuple[float, float, float]:
    """(total, data, pde) with total = data + lam * pde."""
    t = loss_terms(field, X, Y, spec, lam, mask, normalized, with_grad=False)
    return t.total, t.data, t.pde
