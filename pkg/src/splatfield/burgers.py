"""Reference solutions of the viscous Burgers equation

    u_t + u u_x = nu u_xx,   x in [-1, 1],   u(x, 0) = -sin(pi x),   u(+-1, t) = 0

from two independent routes: the Cole-Hopf integral evaluated by
quadrature, and a method-of-lines finite-difference solve on a fine grid
with an implicit (BDF) integrator. ``generate_burgers`` only returns data
once the two agree.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .data import DatasetError, FieldDataset

DEFAULT_NU = 0.01 / math.pi


class OracleMismatch(RuntimeError):
    """The two reference solvers disagree beyond the allowed tolerance."""


def cole_hopf(x, t, nu: float = DEFAULT_NU, half_width: float = 14.0, step: float = 0.005) -> np.ndarray:
    """Exact solution at the tensor grid (x, t) via the Cole-Hopf transform.

    With eta = 2 sqrt(nu t) s,

        u = -int sin(pi(x - eta)) f(x - eta) e^{-s^2} ds / int f(x - eta) e^{-s^2} ds,
        f(y) = exp(-cos(pi y) / (2 pi nu)),

    integrated with the trapezoid rule on s in [-half_width, half_width]
    (spectrally accurate for this smooth, rapidly decaying integrand).
    Exponents are shifted by their maximum to avoid overflow.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    s = np.arange(-half_width, half_width + 0.5 * step, step)
    out = np.empty((x.size, t.size))
    for n, tn in enumerate(t):
        if tn == 0.0:
            out[:, n] = -np.sin(np.pi * x)
            continue
        y = x[:, None] - 2.0 * math.sqrt(nu * tn) * s[None, :]
        expo = -s[None, :] ** 2 - np.cos(np.pi * y) / (2.0 * np.pi * nu)
        weight = np.exp(expo - expo.max(axis=1, keepdims=True))
        out[:, n] = -np.sum(np.sin(np.pi * y) * weight, axis=1) / np.sum(weight, axis=1)
    out[np.abs(np.abs(x) - 1.0) < 1e-15, :] = 0.0
    return out


def _fd_operator(m: int, dx: float, nu: float):
    """Fourth-order central first and second differences on interior nodes,
    second-order next to the Dirichlet boundaries."""
    n = m - 2
    d1 = sparse.lil_matrix((n, n))
    d2 = sparse.lil_matrix((n, n))
    for i in range(n):
        if 2 <= i < n - 2:
            for off, c1, c2 in ((-2, 1 / 12, -1 / 12), (-1, -8 / 12, 16 / 12), (0, 0.0, -30 / 12),
                                (1, 8 / 12, 16 / 12), (2, -1 / 12, -1 / 12)):
                d1[i, i + off] = c1 / dx
                d2[i, i + off] = c2 / dx**2
        else:
            for off, c1, c2 in ((-1, -0.5, 1.0), (0, 0.0, -2.0), (1, 0.5, 1.0)):
                if 0 <= i + off < n:
                    d1[i, i + off] = c1 / dx
                    d2[i, i + off] = c2 / dx**2
    return d1.tocsr(), (nu * d2).tocsr()


def finite_difference(x, t, nu: float = DEFAULT_NU, max_dx: float = 2.5e-4,
                      rtol: float = 1e-9, atol: float = 1e-11) -> np.ndarray:
    """Solve on a uniform fine grid containing every requested x (which must
    be uniformly spaced on [-1, 1]) and return u at the tensor grid."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.isclose(x[0], -1.0) and np.isclose(x[-1], 1.0) and np.allclose(np.diff(x), x[1] - x[0])):
        raise DatasetError("finite-difference oracle needs a uniform x grid spanning [-1, 1]")
    refine = max(1, math.ceil((x[1] - x[0]) / max_dx))
    m = (x.size - 1) * refine + 1
    xf = np.linspace(-1.0, 1.0, m)
    dx = xf[1] - xf[0]
    d1, d2 = _fd_operator(m, dx, nu)

    def rhs(_, u):
        return -d1 @ (0.5 * u * u) + d2 @ u

    def jac(_, u):
        return -d1 @ sparse.diags(u) + d2

    u0 = -np.sin(np.pi * xf[1:-1])
    sol = solve_ivp(rhs, (t[0], t[-1]), u0, method="BDF", t_eval=t, jac=jac, rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleMismatch(f"finite-difference integration failed: {sol.message}")
    full = np.zeros((m, t.size))
    full[1:-1] = sol.y
    return full[::refine]


def generate_burgers(nx: int = 256, nt: int = 100, nu: float = DEFAULT_NU, t_max: float = 0.99,
                     tolerance: float = 1e-4) -> FieldDataset:
    """Burgers reference data on x = linspace(-1, 1, nx), t = linspace(0, t_max, nt).

    Raises ``OracleMismatch`` when the Cole-Hopf and finite-difference
    solutions differ by more than ``tolerance`` anywhere on the grid.
    """
    if nx < 8 or nt < 8:
        raise DatasetError("Burgers grid needs nx, nt >= 8")
    x = np.linspace(-1.0, 1.0, nx)
    t = np.linspace(0.0, t_max, nt)
    exact = cole_hopf(x, t, nu)
    fd = finite_difference(x, t, nu)
    gap = float(np.max(np.abs(exact - fd)))
    if not gap <= tolerance:
        raise OracleMismatch(f"Burgers oracles disagree by {gap:.3e} > {tolerance:.1e}")
    X, T = np.meshgrid(x, t, indexing="ij")
    return FieldDataset(
        np.stack([X.ravel(), T.ravel()], axis=1), exact.reshape(-1, 1),
        grid_shape=(nx, nt), time_axis=1, coord_names=("x", "t"), value_names=("u",),
        physics={"nu": nu, "oracle_gap": gap},
    )
