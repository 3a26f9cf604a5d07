"""Monte-Carlo checks of the normalized estimator's convergence rate and of
the far-field collapse of the unnormalized sum."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import kernels
from .field import DEFAULT_Z_THRESHOLD, GaussianField


def sine_target(x: np.ndarray) -> np.ndarray:
    """sum_j sin(2 pi x_j), shape (K, 1)."""
    return np.sin(2.0 * np.pi * x).sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class RateExperiment:
    """Setup for an empirical rate fit of the normalized estimator.

    Centres are drawn uniformly on ``[low, high]^q`` with values
    ``target(mu) + noise * N(0, 1)``; every Gaussian shares the bandwidth
    ``c * N ** (-1 / (2 beta + q))``.
    """

    q: int = 1
    beta: float = 2.0
    noise: float = 0.5
    n_values: tuple[int, ...] = tuple(2**k for k in range(7, 15))
    c: float = 0.1
    trials: int = 20
    target: Callable[[np.ndarray], np.ndarray] = sine_target
    low: float = 0.0
    high: float = 1.0
    n_test: int = 64
    margin: float = 0.1
    seed: int = 0
    z_threshold: float = DEFAULT_Z_THRESHOLD

    def __post_init__(self):
        n = np.asarray(self.n_values)
        if n.size < 3:
            raise ValueError("a rate fit needs at least 3 N values")
        if np.any(np.diff(n) <= 0) or n[0] < 1:
            raise ValueError("N values must be positive and strictly increasing")
        if not self.c > 0:
            raise ValueError("bandwidth constant c must be positive")
        if self.beta < 1:
            raise ValueError("smoothness beta must be >= 1")
        if self.trials < 1 or self.q < 1 or self.noise < 0 or not self.high > self.low:
            raise ValueError("invalid trials, q, noise or sampling box")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must lie in [0, 0.5)")

    @property
    def exponent(self) -> float:
        """Predicted error exponent -beta / (2 beta + q)."""
        return -self.beta / (2.0 * self.beta + self.q)

    def bandwidth(self, n: int) -> float:
        return self.c * n ** (-1.0 / (2.0 * self.beta + self.q))

    def test_points(self) -> np.ndarray:
        """Tensor grid inside the box, kept ``margin`` (fraction of width) from its edges."""
        width = self.high - self.low
        per_axis = max(2, round(self.n_test ** (1.0 / self.q)))
        axis = np.linspace(self.low + self.margin * width, self.high - self.margin * width, per_axis)
        grids = np.meshgrid(*([axis] * self.q), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass
class RateResult:
    n_values: np.ndarray
    mean_rmse: np.ndarray
    std_rmse: np.ndarray
    slope: float | None
    slope_stderr: float | None
    exact_fit: bool
    trial_rmse: np.ndarray = dc_field(repr=False)

    def rows(self) -> list[dict]:
        return [{"N": int(n), "mean_rmse": float(m), "std_rmse": float(s)}
                for n, m, s in zip(self.n_values, self.mean_rmse, self.std_rmse)]

    def to_dict(self) -> dict:
        return {"table": self.rows(), "slope": self.slope, "slope_stderr": self.slope_stderr,
                "exact_fit": self.exact_fit}


def fit_loglog(n_values, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(N), with its standard error."""
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(x.size - 2, 1)
    sxx = np.sum((x - x.mean()) ** 2)
    return float(coef[0]), float(np.sqrt(np.sum(resid**2) / dof / sxx))


def trial_rmse(exp: RateExperiment, n: int, rng: np.random.Generator, test=None) -> float:
    """RMSE of one draw of ``n`` noisy samples at the experiment's test points."""
    test = exp.test_points() if test is None else test
    mu = rng.uniform(exp.low, exp.high, size=(n, exp.q))
    truth_mu = np.asarray(exp.target(mu), dtype=float).reshape(n, -1)
    values = truth_mu + exp.noise * rng.standard_normal(truth_mu.shape)
    log_h = np.full((n, exp.q), np.log(exp.bandwidth(n)))
    pred, _, _ = kernels.forward(mu, log_h, values, test, exp.z_threshold, True, 0)
    truth = np.asarray(exp.target(test), dtype=float).reshape(test.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def run_rate_experiment(exp: RateExperiment = RateExperiment(), exact_tol: float = 1e-12) -> RateResult:
    """Mean RMSE per N over independent trials and the fitted log-log slope.

    Trial (i, t) draws from ``SeedSequence([seed, i, t])`` so any single
    trial can be reproduced in isolation. When every mean RMSE is below
    ``exact_tol`` the slope is undefined and ``exact_fit`` is set instead.
    """
    test = exp.test_points()
    n_values = np.asarray(exp.n_values, dtype=int)
    errs = np.empty((n_values.size, exp.trials))
    for i, n in enumerate(n_values):
        for t in range(exp.trials):
            rng = np.random.default_rng(np.random.SeedSequence([exp.seed, i, t]))
            errs[i, t] = trial_rmse(exp, int(n), rng, test)
    mean = errs.mean(axis=1)
    std = errs.std(axis=1, ddof=1) if exp.trials > 1 else np.zeros_like(mean)
    if np.all(mean <= exact_tol):
        return RateResult(n_values, mean, std, None, None, True, errs)
    slope, se = fit_loglog(n_values, np.maximum(mean, np.finfo(float).tiny))
    return RateResult(n_values, mean, std, slope, se, False, errs)


@dataclass
class DecayTable:
    distances: np.ndarray
    probes: np.ndarray
    unnormalized_norm: np.ndarray
    normalized: np.ndarray
    value_scale: float

    @property
    def unnormalized_monotone(self) -> bool:
        return bool(np.all(np.diff(self.unnormalized_norm) <= 0))

    def normalized_in_bounds(self, values) -> bool:
        lo, hi = values.min(axis=0), values.max(axis=0)
        return bool(np.all((self.normalized >= lo) & (self.normalized <= hi)))

    def rows(self) -> list[dict]:
        return [{"distance": float(d), "unnormalized_norm": float(u), "normalized": v.tolist()}
                for d, u, v in zip(self.distances, self.unnormalized_norm, self.normalized)]


def run_unnormalized_decay_demo(field: GaussianField, distances, axis: int = 0) -> DecayTable:
    """Probe both predictors moving away from the field along one axis.

    Distances are in units of the field's largest scale on ``axis`` and are
    measured from the outermost centre, so at distance d every Gaussian's
    influence is at most exp(-d^2 / 2).
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1 or d.size == 0 or np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise ValueError("probe distances must be positive and strictly increasing")
    if not 0 <= axis < field.q:
        raise ValueError(f"axis {axis} out of range for q={field.q}")
    anchor = field.mu.mean(axis=0)
    probes = np.repeat(anchor[None, :], d.size, axis=0)
    probes[:, axis] = field.mu[:, axis].max() + d * field.h[:, axis].max()
    args = (field.mu, field.log_h, field.values, probes, field.z_threshold)
    unnorm, _, _ = kernels.forward(*args, False, 0)
    norm, _, _ = kernels.forward(*args, True, 0)
    return DecayTable(d, probes, np.linalg.norm(unnorm, axis=1), norm,
                      float(np.linalg.norm(field.values, axis=1).max()))
