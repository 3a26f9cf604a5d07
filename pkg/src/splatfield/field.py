"""Explicit axes-aligned Gaussian field: construction, initialization,
flat parameter vectors and checkpoint files."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_Z_THRESHOLD = 1e-4


class FieldError(ValueError):
    """Invalid Gaussian field construction or parameter vector."""


@dataclass(frozen=True)
class AxesGaussian:
    """One splat: centre, per-axis log-scales and attached property vector."""

    mu: np.ndarray
    log_h: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name in ("mu", "log_h", "value"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    @property
    def h(self) -> np.ndarray:
        return np.exp(self.log_h)


@dataclass
class GaussianField:
    """N axes-aligned Gaussians mapping R^q to R^p.

    Parameters are stored as three row-aligned arrays: ``mu`` (N, q),
    ``log_h`` (N, q) and ``values`` (N, p). Scales are kept as logs so
    any real parameter vector is a valid field.
    """

    mu: np.ndarray
    log_h: np.ndarray
    values: np.ndarray
    z_threshold: float = DEFAULT_Z_THRESHOLD
    q: int = dc_field(init=False)
    p: int = dc_field(init=False)

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=float, ndmin=2)
        self.log_h = np.array(self.log_h, dtype=float, ndmin=2)
        self.values = np.array(self.values, dtype=float, ndmin=2)
        if self.mu.shape != self.log_h.shape:
            raise FieldError(f"mu {self.mu.shape} and log_h {self.log_h.shape} disagree")
        if self.values.shape[0] != self.mu.shape[0]:
            raise FieldError("values and mu have different Gaussian counts")
        if self.mu.shape[0] == 0:
            raise FieldError("a field needs at least one Gaussian")
        if not (self.z_threshold >= 0.0):
            raise FieldError(f"z_threshold must be non-negative, got {self.z_threshold}")
        for name in ("mu", "log_h", "values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FieldError(f"non-finite entries in {name}")
        self.q = self.mu.shape[1]
        self.p = self.values.shape[1]

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, i: int) -> AxesGaussian:
        return AxesGaussian(self.mu[i].copy(), self.log_h[i].copy(), self.values[i].copy())

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def h(self) -> np.ndarray:
        return np.exp(self.log_h)

    @property
    def gaussians(self) -> list[AxesGaussian]:
        return [self[i] for i in range(self.n)]

    def copy(self) -> "GaussianField":
        return GaussianField(self.mu.copy(), self.log_h.copy(), self.values.copy(), self.z_threshold)

    def with_params(self, mu=None, log_h=None, values=None) -> "GaussianField":
        return GaussianField(
            self.mu if mu is None else mu,
            self.log_h if log_h is None else log_h,
            self.values if values is None else values,
            self.z_threshold,
        )

    def flatten(self) -> np.ndarray:
        return flatten(self)


def new_field(q: int, p: int, gaussians: Sequence[AxesGaussian], z_threshold: float = DEFAULT_Z_THRESHOLD) -> GaussianField:
    """Validate a list of Gaussians against (q, p) and pack them into a field."""
    if q < 1 or p < 1:
        raise FieldError(f"q and p must be positive, got q={q}, p={p}")
    if len(gaussians) == 0:
        raise FieldError("a field needs at least one Gaussian")
    for i, g in enumerate(gaussians):
        if g.mu.shape != (q,) or g.log_h.shape != (q,) or g.value.shape != (p,):
            raise FieldError(
                f"Gaussian {i} has mu {g.mu.shape}, log_h {g.log_h.shape}, value {g.value.shape}; "
                f"expected ({q},), ({q},), ({p},)"
            )
    return GaussianField(
        np.stack([g.mu for g in gaussians]),
        np.stack([g.log_h for g in gaussians]),
        np.stack([g.value for g in gaussians]),
        z_threshold,
    )


# -- parameter vectors -------------------------------------------------------

def flatten(field: GaussianField) -> np.ndarray:
    """Concatenate (mu | log_h | value) of every Gaussian in list order."""
    return np.hstack([field.mu, field.log_h, field.values]).ravel()


def apply(field: GaussianField, params: np.ndarray) -> GaussianField:
    """Return a field of the same shape whose parameters are ``params``."""
    params = np.asarray(params, dtype=float)
    width = 2 * field.q + field.p
    if params.ndim != 1 or params.size != field.n * width:
        raise FieldError(f"parameter vector has length {params.size}, expected {field.n * width}")
    rows = params.reshape(field.n, width)
    q = field.q
    return GaussianField(rows[:, :q].copy(), rows[:, q:2 * q].copy(), rows[:, 2 * q:].copy(), field.z_threshold)


def pack_rows(d_mu, d_log_h, d_values) -> np.ndarray:
    return np.hstack([d_mu, d_log_h, d_values]).ravel()


# -- initialization ------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """How to place the initial Gaussians.

    ``kind="grid"`` lays a uniform grid over the bounding box with
    ``count`` total centres (split evenly across non-degenerate axes)
    or explicit per-axis ``counts``. ``kind="stride"`` takes every
    ``stride``-th dataset point in storage order as a centre.
    """

    kind: str = "grid"
    count: int = 400
    counts: tuple[int, ...] | None = None
    stride: int = 10

    def __post_init__(self):
        if self.kind not in ("grid", "stride"):
            raise FieldError(f"unknown init kind {self.kind!r}")
        if self.kind == "grid" and self.counts is None and self.count < 1:
            raise FieldError("requested Gaussian count must be >= 1")
        if self.counts is not None and any(c < 1 for c in self.counts):
            raise FieldError("per-axis counts must be >= 1")
        if self.stride < 1:
            raise FieldError("stride must be >= 1")


def _mean_nn_spacing(coords: np.ndarray) -> float:
    if coords.shape[0] < 2:
        return 1.0
    dist, _ = cKDTree(coords).query(coords, k=2)
    spacing = float(np.mean(dist[:, 1]))
    return spacing if spacing > 0 else 1.0


def _nearest_values(coords, values, centers):
    # cKDTree resolves exact distance ties arbitrarily; take the lowest index instead
    tree = cKDTree(coords)
    dist, _ = tree.query(centers)
    out = np.empty((centers.shape[0], values.shape[1]))
    for row, (c, d0) in enumerate(zip(centers, np.atleast_1d(dist))):
        ties = tree.query_ball_point(c, d0 * (1 + 1e-12) + 1e-300)
        out[row] = values[min(ties)]
    return out


def init_from_grid(dataset, spec: InitSpec | int = 400, z_threshold: float = DEFAULT_Z_THRESHOLD) -> GaussianField:
    """Initialize a field from a dataset.

    Each value is copied from the nearest dataset point (Euclidean in
    coordinates, lowest index on ties). Grid initial scales equal the
    grid spacing per axis; a degenerate axis gets a single grid line and
    the dataset's mean nearest-neighbour spacing.
    """
    if isinstance(spec, int):
        spec = InitSpec(count=spec)
    coords = np.asarray(dataset.coords, dtype=float)
    values = np.asarray(dataset.values, dtype=float)
    if coords.shape[0] == 0:
        raise FieldError("cannot initialize from an empty dataset")
    q = coords.shape[1]
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    extent = hi - lo
    live = extent > 0

    if spec.kind == "stride":
        centers = coords[:: spec.stride].copy()
        m = centers.shape[0]
        d = max(1, int(live.sum()))
        per_axis = max(1.0, round(m ** (1.0 / d)) - 1.0)
        h = np.where(live, extent / per_axis, _mean_nn_spacing(coords))
        log_h = np.tile(np.log(h), (m, 1))
        return GaussianField(centers, log_h, values[:: spec.stride].copy(), z_threshold)

    if spec.counts is not None:
        if len(spec.counts) != q:
            raise FieldError(f"counts has {len(spec.counts)} entries for q={q}")
        counts = [c if live[j] else 1 for j, c in enumerate(spec.counts)]
    else:
        d = int(live.sum())
        n_axis = max(1, int(round(spec.count ** (1.0 / d)))) if d else 1
        counts = [n_axis if live[j] else 1 for j in range(q)]

    fallback_h = None
    axes, h = [], np.empty(q)
    for j in range(q):
        if not live[j]:
            axes.append(np.array([lo[j]]))
            if fallback_h is None:
                fallback_h = _mean_nn_spacing(coords)
            h[j] = fallback_h
        elif counts[j] == 1:
            axes.append(np.array([0.5 * (lo[j] + hi[j])]))
            h[j] = extent[j]
        else:
            axes.append(np.linspace(lo[j], hi[j], counts[j]))
            h[j] = extent[j] / (counts[j] - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    log_h = np.tile(np.log(h), (centers.shape[0], 1))
    return GaussianField(centers, log_h, _nearest_values(coords, values, centers), z_threshold)


# -- checkpoints ---------------------------------------------------------------

def save_field(field: GaussianField, path) -> None:
    """Write a text checkpoint (header then N rows of mu | log_h | value).

    Floats use 17 significant digits so reloading is bit-exact.
    """
    path = os.fspath(path)
    header = f"# splatfield-checkpoint v1\n# q={field.q} p={field.p} N={field.n} z_threshold={field.z_threshold!r}\n"
    rows = np.hstack([field.mu, field.log_h, field.values])
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(header)
        np.savetxt(fh, rows, fmt="%.17g")
    os.replace(tmp, path)


def load_field(path) -> GaussianField:
    with open(path) as fh:
        first = fh.readline()
        second = fh.readline()
        if not first.startswith("# splatfield-checkpoint"):
            raise FieldError(f"{path}: not a field checkpoint")
        meta = dict(item.split("=", 1) for item in second.lstrip("# ").split())
        q, p, n = int(meta["q"]), int(meta["p"]), int(meta["N"])
        z = float(meta["z_threshold"])
        rows = np.loadtxt(fh, ndmin=2)
    if rows.shape != (n, 2 * q + p):
        raise FieldError(f"{path}: expected {n} rows of {2 * q + p} columns, got {rows.shape}")
    return GaussianField(rows[:, :q], rows[:, q:2 * q], rows[:, 2 * q:], z)

