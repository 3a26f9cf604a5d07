"""Point-cloud datasets, spatial-average downsampling, synthetic ground
truths and error metrics."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""


@dataclass
class FieldDataset:
    """K points with q coordinates and p values.

    ``grid_shape`` (per coordinate axis, C order with the last coordinate
    varying fastest) is present for structured data. ``time_axis`` marks
    the coordinate that spatial averaging leaves alone. ``physics`` holds
    optional scalars such as ``re``, ``nu``, ``length``, ``velocity``.
    """

    coords: np.ndarray
    values: np.ndarray
    mask: np.ndarray | None = None
    grid_shape: tuple[int, ...] | None = None
    time_axis: int | None = None
    coord_names: tuple[str, ...] | None = None
    value_names: tuple[str, ...] | None = None
    physics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.array(self.coords, dtype=float, ndmin=2)
        self.values = np.array(self.values, dtype=float, ndmin=2)
        if self.values.shape[0] != self.coords.shape[0] and self.values.shape[0] == 1:
            self.values = self.values.T
        K, q = self.coords.shape
        if K < 1:
            raise DatasetError("dataset has no points")
        if self.values.shape[0] != K:
            raise DatasetError(f"{K} coordinate rows but {self.values.shape[0]} value rows")
        if not (np.all(np.isfinite(self.coords)) and np.all(np.isfinite(self.values))):
            raise DatasetError("dataset contains non-finite entries")
        p = self.values.shape[1]
        self.mask = np.ones(p) if self.mask is None else np.asarray(self.mask, dtype=float)
        if self.mask.shape != (p,) or not np.all((self.mask == 0) | (self.mask == 1)):
            raise DatasetError(f"mask must be a length-{p} 0/1 vector")
        if self.grid_shape is not None:
            self.grid_shape = tuple(int(n) for n in self.grid_shape)
            if len(self.grid_shape) != q or int(np.prod(self.grid_shape)) != K:
                raise DatasetError(f"grid shape {self.grid_shape} inconsistent with K={K}, q={q}")
        if self.time_axis is not None and not 0 <= self.time_axis < q:
            raise DatasetError(f"time axis {self.time_axis} out of range for q={q}")
        self.coord_names = tuple(self.coord_names) if self.coord_names else tuple(f"x{j}" for j in range(q))
        self.value_names = tuple(self.value_names) if self.value_names else tuple(f"v{a}" for a in range(p))
        if len(self.coord_names) != q or len(self.value_names) != p:
            raise DatasetError("column names do not match the array shapes")

    @property
    def K(self) -> int:
        return self.coords.shape[0]

    @property
    def q(self) -> int:
        return self.coords.shape[1]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, index) -> "FieldDataset":
        return replace(self, coords=self.coords[index], values=self.values[index], grid_shape=None)


# -- file format --------------------------------------------------------------
#
# Delimited text: optional "# key: json" metadata lines, then a header row of
# column names, then one point per row. Values are written with 17
# significant digits so save -> load is bit-exact. A ".npz" path uses numpy's
# binary container with the same fields.


def save_dataset(ds: FieldDataset, path) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        if path.endswith(".npz"):
            with open(tmp, "wb") as fh:
                np.savez(fh, coords=ds.coords, values=ds.values, mask=ds.mask,
                         meta=json.dumps(_meta(ds)))
        else:
            with open(tmp, "w") as fh:
                for key, val in _meta(ds).items():
                    fh.write(f"# {key}: {json.dumps(val)}\n")
                fh.write(",".join(ds.coord_names + ds.value_names) + "\n")
                np.savetxt(fh, np.hstack([ds.coords, ds.values]), fmt="%.17g", delimiter=",")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _meta(ds: FieldDataset) -> dict:
    return {
        "coords": list(ds.coord_names),
        "values": list(ds.value_names),
        "mask": [int(m) for m in ds.mask],
        "grid_shape": list(ds.grid_shape) if ds.grid_shape else None,
        "time_axis": ds.time_axis,
        "physics": ds.physics,
    }


@dataclass(frozen=True)
class Layout:
    """Which columns are coordinates and which are values.

    When ``length`` and ``velocity_scale`` are given (or present in the
    file's physics metadata) the data are made dimensionless on load:
    spatial coordinates / L, time / (L / U), velocity channels / U and the
    pressure channel / U^2 (kinematic pressure assumed).
    """

    coords: tuple[str, ...] | None = None
    values: tuple[str, ...] | None = None
    time: str | None = None
    velocity: tuple[str, ...] = ()
    pressure: str | None = None
    mask: tuple[int, ...] | None = None
    length: float | None = None
    velocity_scale: float | None = None


def load_dataset(path, layout: Layout | None = None) -> FieldDataset:
    """Read a dataset file and validate it against ``layout``."""
    path = os.fspath(path)
    layout = layout or Layout()
    if not os.path.exists(path):
        raise DatasetError(f"{path}: no such file")
    if path.endswith(".npz"):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            table = np.hstack([z["coords"], z["values"]])
        names = meta["coords"] + meta["values"]
    else:
        meta, names, table = _read_text(path)

    columns = {name: i for i, name in enumerate(names)}
    coord_cols = list(layout.coords or meta.get("coords") or [])
    value_cols = list(layout.values or meta.get("values") or [])
    if not coord_cols or not value_cols:
        raise DatasetError(f"{path}: layout does not say which columns are coordinates and values")
    for name in coord_cols + value_cols:
        if name not in columns:
            raise DatasetError(f"{path}: missing column {name!r} (have {', '.join(names)})")
    coords = table[:, [columns[c] for c in coord_cols]]
    values = table[:, [columns[c] for c in value_cols]]
    bad = ~np.isfinite(np.hstack([coords, values]))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DatasetError(f"{path}: non-finite value at data row {row + 1}, column "
                           f"{(coord_cols + value_cols)[col]!r}")

    same_order = coord_cols == list(meta.get("coords") or [])
    time_axis = meta.get("time_axis") if same_order else None
    if layout.time is not None:
        time_axis = coord_cols.index(layout.time)
    mask = layout.mask
    if mask is None and value_cols == list(meta.get("values") or []):
        mask = meta.get("mask")
    physics = dict(meta.get("physics") or {})
    ds = FieldDataset(
        coords, values, mask=mask,
        grid_shape=meta.get("grid_shape") if same_order else None,
        time_axis=time_axis, coord_names=coord_cols, value_names=value_cols, physics=physics,
    )
    L = layout.length or physics.get("length")
    U = layout.velocity_scale or physics.get("velocity")
    if L and U and not physics.get("dimensionless"):
        vel = [value_cols.index(v) for v in layout.velocity]
        pres = value_cols.index(layout.pressure) if layout.pressure else None
        ds = nondimensionalize(ds, L, U, velocity=vel, pressure=pres)
    return ds


def _read_text(path):
    meta = {}
    with open(path) as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].partition(":")
        try:
            meta[key.strip()] = json.loads(val)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{i + 1}: bad metadata line ({exc.msg})") from None
        i += 1
    if i >= len(lines):
        raise DatasetError(f"{path}: missing header row")
    names = [c.strip() for c in lines[i].strip().split(",")]
    rows = []
    for lineno in range(i + 1, len(lines)):
        text = lines[lineno].strip()
        if not text:
            continue
        cells = text.split(",")
        if len(cells) != len(names):
            raise DatasetError(f"{path}:{lineno + 1}: expected {len(names)} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            col = next(j for j, c in enumerate(cells) if not _is_float(c))
            raise DatasetError(f"{path}:{lineno + 1}: column {names[col]!r} is not a number: {cells[col]!r}") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return meta, names, np.array(rows)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def nondimensionalize(ds: FieldDataset, length: float, speed: float, velocity=(), pressure=None) -> FieldDataset:
    """Scale coordinates by L (time by L/U), velocity channels by U and the
    pressure channel by U^2."""
    coords = ds.coords.copy()
    for j in range(ds.q):
        coords[:, j] /= (length / speed) if j == ds.time_axis else length
    values = ds.values.copy()
    for a in velocity:
        values[:, a] /= speed
    if pressure is not None:
        values[:, pressure] /= speed**2
    physics = dict(ds.physics, length=length, velocity=speed, dimensionless=True)
    if "nu" in physics:
        physics["re"] = speed * length / physics["nu"]
    return replace(ds, coords=coords, values=values, physics=physics)


# -- spatial averaging ------------------------------------------------------------

def spatial_average(ds: FieldDataset, factor: int = 2, passes: int = 1) -> FieldDataset:
    """Block-average a gridded dataset over its spatial axes.

    Each pass replaces every ``factor``-per-axis block of spatial points
    by one point at the block centre carrying the block-mean value. The
    time axis (if any) is untouched. Trailing rows that do not fill a
    block are dropped with a warning.
    """
    if ds.grid_shape is None:
        raise DatasetError("spatial averaging needs grid metadata")
    if factor < 1 or passes < 0:
        raise DatasetError("factor must be >= 1 and passes >= 0")
    for _ in range(passes):
        ds = _average_once(ds, factor)
    return ds


def _average_once(ds: FieldDataset, f: int) -> FieldDataset:
    shape = ds.grid_shape
    spatial = [j for j in range(ds.q) if j != ds.time_axis]
    coords = ds.coords.reshape(shape + (ds.q,))
    values = ds.values.reshape(shape + (ds.p,))
    new_shape = list(shape)
    crop = []
    for j in range(ds.q):
        if j in spatial:
            n = shape[j] // f
            if n == 0:
                raise DatasetError(f"axis {j} has {shape[j]} points, fewer than the block size {f}")
            if shape[j] % f:
                log.warning("axis %d: dropping %d trailing points not filling a block", j, shape[j] % f)
            new_shape[j] = n
            crop.append(slice(0, n * f))
        else:
            crop.append(slice(None))
    coords = coords[tuple(crop)]
    values = values[tuple(crop)]

    def block_mean(a):
        split = []
        for j in range(ds.q):
            split += [new_shape[j], f] if j in spatial else [new_shape[j]]
        a = a.reshape(split + [a.shape[-1]])
        block_axes = []
        pos = 0
        for j in range(ds.q):
            if j in spatial:
                block_axes.append(pos + 1)
                pos += 2
            else:
                pos += 1
        return a.mean(axis=tuple(block_axes))

    new_coords = block_mean(coords).reshape(-1, ds.q)
    new_values = block_mean(values).reshape(-1, ds.p)
    return replace(ds, coords=new_coords, values=new_values, grid_shape=tuple(new_shape))


def grid_subsample(ds: FieldDataset, strides) -> FieldDataset:
    """Keep every ``strides[j]``-th grid line along each axis (starting at 0)."""
    if ds.grid_shape is None:
        raise DatasetError("strided subsampling needs grid metadata")
    strides = tuple(int(s) for s in strides)
    if len(strides) != ds.q or any(s < 1 for s in strides):
        raise DatasetError(f"need {ds.q} strides, each >= 1")
    shape = tuple(ds.grid_shape)
    sl = tuple(slice(None, None, s) for s in strides)
    coords = ds.coords.reshape(shape + (ds.q,))[sl]
    values = ds.values.reshape(shape + (ds.p,))[sl]
    return replace(ds, coords=coords.reshape(-1, ds.q), values=values.reshape(-1, ds.p),
                   grid_shape=coords.shape[:-1])


# -- synthetic ground truths -------------------------------------------------------

def grid_dataset(axes, func, coord_names=None, value_names=None, time_axis=None, **kw) -> FieldDataset:
    """Evaluate ``func(coords) -> (K, p)`` on the tensor grid of 1D ``axes``."""
    mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    values = np.asarray(func(coords), dtype=float).reshape(coords.shape[0], -1)
    return FieldDataset(coords, values, grid_shape=tuple(len(a) for a in axes), time_axis=time_axis,
                        coord_names=coord_names, value_names=value_names, **kw)


def rosenbrock(x, y):
    return (1.0 - x) ** 2 + 100.0 * (x - y**2) ** 2


def generate_rosenbrock(nx: int = 100, ny: int = 100, lo: float = -2.0, hi: float = 2.0) -> FieldDataset:
    """(1 - x)^2 + 100 (x - y^2)^2 sampled on an nx x ny grid over [lo, hi]^2."""
    if nx < 2 or ny < 2:
        raise DatasetError("Rosenbrock grid needs at least 2 points per axis")
    return grid_dataset(
        [np.linspace(lo, hi, nx), np.linspace(lo, hi, ny)],
        lambda c: rosenbrock(c[:, 0], c[:, 1]),
        coord_names=("x", "y"), value_names=("f",),
    )


def taylor_green(x, y, t, nu):
    """Decaying Taylor-Green vortex (u, v, p) solving the 2D incompressible
    Navier-Stokes equations with Re = 1 / nu and unit density."""
    decay = np.exp(-2.0 * nu * t)
    u = -np.cos(x) * np.sin(y) * decay
    v = np.sin(x) * np.cos(y) * decay
    p = -0.25 * (np.cos(2 * x) + np.cos(2 * y)) * decay**2
    return np.stack([u, v, p], axis=-1)


def generate_taylor_green(nx: int = 32, ny: int = 32, nt: int = 5, t_max: float = 1.0,
                          nu: float = 0.1) -> FieldDataset:
    """Taylor-Green samples on [0, 2 pi)^2 x [0, t_max], coordinates (x, y, t)."""
    if nu <= 0:
        raise DatasetError("viscosity must be positive")
    xs = np.linspace(0.0, 2 * np.pi, nx, endpoint=False)
    ys = np.linspace(0.0, 2 * np.pi, ny, endpoint=False)
    ts = np.linspace(0.0, t_max, nt)
    return grid_dataset(
        [xs, ys, ts],
        lambda c: taylor_green(c[:, 0], c[:, 1], c[:, 2], nu),
        coord_names=("x", "y", "t"), value_names=("u", "v", "p"), time_axis=2,
        physics={"nu": nu, "re": 1.0 / nu},
    )


# -- metrics ------------------------------------------------------------------------

def _masked(pred, truth, mask):
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    cols = np.ones(truth.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return pred[:, cols], truth[:, cols]


def relative_l2(pred, truth, mask=None) -> float:
    """sqrt(sum ||pred - truth||^2 / sum ||truth||^2) over the masked columns."""
    p, t = _masked(pred, truth, mask)
    denom = float(np.sum(t * t))
    if denom == 0.0:
        raise ValueError("truth is identically zero on the masked columns")
    return float(np.sqrt(np.sum((p - t) ** 2) / denom))


def rmse(pred, truth, mask=None) -> float:
    """sqrt(mean over points of ||pred - truth||^2) over the masked columns."""
    p, t = _masked(pred, truth, mask)
    return float(np.sqrt(np.mean(np.sum((p - t) ** 2, axis=1))))


def metrics_record(pred, truth, mask=None) -> dict:
    cols = np.ones(np.shape(truth)[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return {
        "relative_l2": relative_l2(pred, truth, mask),
        "rmse": rmse(pred, truth, mask),
        "K": int(np.shape(truth)[0]),
        "masked_components": [int(i) for i in np.flatnonzero(cols)],
    }
