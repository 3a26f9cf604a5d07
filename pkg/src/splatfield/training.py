"""Adam optimization of a Gaussian field with scheduled density control."""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .density import DensifyConfig, densify, gaussian_errors, merge, select_densify
from .field import GaussianField
from .physics import NonFiniteLoss, PdeSpec, loss_terms
from .splatting import influence_matrix

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam moments stored row-per-Gaussian, shape (N, 2q + p)."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))

    def reindex(self, parents: np.ndarray) -> None:
        """Carry moments of surviving rows; new rows (parent -1) start at zero."""
        parents = np.asarray(parents)
        width = self.m.shape[1]
        m = np.zeros((parents.size, width))
        v = np.zeros((parents.size, width))
        old = parents >= 0
        m[old] = self.m[parents[old]]
        v[old] = self.v[parents[old]]
        self.m, self.v = m, v


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (state, new_params).

    ``params`` and ``grad`` must match the moment arrays in shape.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return state, params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 10_000
    batch_size: int = 0
    lam: float = 1.0
    densify: DensifyConfig = dc_field(default_factory=DensifyConfig)
    seed: int = 0
    freeze_positions: bool = False
    density_control: bool = True
    normalized: bool = True
    time_budget: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0 (0 = full batch)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("densify"), dict):
            d["densify"] = DensifyConfig(**d["densify"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    data: float
    pde: float
    n_gaussians: int
    seconds: float
    n_split: int = 0
    n_clone: int = 0
    n_merged: int = 0


@dataclass
class TrainReport:
    records: list[EpochRecord] = dc_field(default_factory=list)
    checkpoint: str | None = None
    stopped_early: bool = False

    @property
    def counts(self) -> list[int]:
        return [r.n_gaussians for r in self.records]

    def summary(self) -> dict:
        last = self.records[-1]
        return {
            "epochs": len(self.records),
            "final_total": last.total,
            "final_data": last.data,
            "final_pde": last.pde,
            "final_n_gaussians": last.n_gaussians,
            "wall_seconds": sum(r.seconds for r in self.records),
            "checkpoint": self.checkpoint,
            "stopped_early": self.stopped_early,
        }

    def write(self, directory) -> None:
        """Write report.csv (one row per epoch) and summary.json into ``directory``."""
        fields = list(EpochRecord.__dataclass_fields__)
        _atomic_write(os.path.join(directory, "report.csv"), lambda fh: _write_csv(fh, fields, self.records))
        _atomic_write(os.path.join(directory, "summary.json"),
                      lambda fh: json.dump(self.summary(), fh, indent=2))


def _write_csv(fh, fields, records):
    writer = csv.writer(fh)
    writer.writerow(fields)
    for r in records:
        writer.writerow([repr(getattr(r, f)) if isinstance(getattr(r, f), float) else getattr(r, f)
                         for f in fields])


def _atomic_write(path, writer):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer(fh)
    os.replace(tmp, path)


def _rows(field: GaussianField) -> np.ndarray:
    return np.hstack([field.mu, field.log_h, field.values])


def _from_rows(rows: np.ndarray, field: GaussianField) -> GaussianField:
    q = field.q
    return GaussianField(rows[:, :q], rows[:, q:2 * q], rows[:, 2 * q:], field.z_threshold)


def _check_finite(terms, epoch):
    for name in ("data", "pde", "total"):
        if not np.isfinite(getattr(terms, name)):
            raise NonFiniteLoss(name, epoch)
    if terms.grad is not None and not all(np.all(np.isfinite(g)) for g in terms.grad):
        raise NonFiniteLoss("gradient", epoch)


def train(dataset, field0: GaussianField, pde: PdeSpec | None = None,
          cfg: TrainConfig = TrainConfig()) -> tuple[GaussianField, TrainReport]:
    """Fit ``field0`` to ``dataset`` and return the final field and its report.

    Each epoch walks the data in seeded random batches (one batch when
    ``batch_size`` is 0), taking one Adam step per batch. Every
    ``cfg.densify.interval`` epochs (except after the last) the field is
    densified and then merged; Adam moments follow surviving Gaussians and
    start at zero for new ones. Each epoch record holds the full-dataset
    loss of the field as it stands at the end of that epoch.
    """
    pde = pde or PdeSpec.none()
    pde.check(field0.q, field0.p)
    X, Y, mask = dataset.coords, dataset.values, dataset.mask
    K = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    field = field0.copy()
    q = field.q
    state = AdamState.zeros(_rows(field).shape)
    update_mask = np.ones(2 * q + field.p)
    if cfg.freeze_positions:
        update_mask[:q] = 0.0
    full_batch = cfg.batch_size == 0 or cfg.batch_size >= K

    def evaluate(f, idx=None, with_grad=True):
        Xb = X if idx is None else X[idx]
        Yb = Y if idx is None else Y[idx]
        return loss_terms(f, Xb, Yb, pde, cfg.lam, mask, cfg.normalized, with_grad)

    report = TrainReport()
    grad_sum = np.zeros((field.n, q))
    grad_steps = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        if full_batch:
            batches = [None]
        else:
            order = rng.permutation(K)
            batches = [order[i:i + cfg.batch_size] for i in range(0, K, cfg.batch_size)]
        for idx in batches:
            terms = evaluate(field, idx)
            _check_finite(terms, epoch)
            if full_batch and report.records:
                # full-batch loss of the field left by the previous epoch
                _fill(report.records[-1], terms)
            d_mu, d_lh, d_v = terms.grad
            grad_sum += d_mu
            grad_steps += 1
            grad = np.hstack([d_mu, d_lh, d_v]) * update_mask
            state, rows = adam_step(state, _rows(field), grad, cfg.learning_rate)
            if cfg.freeze_positions:
                rows[:, :q] = field.mu
            field = _from_rows(rows, field)

        record = EpochRecord(epoch, np.nan, np.nan, np.nan, field.n, 0.0)
        interval = cfg.densify.interval
        if cfg.density_control and (epoch + 1) % interval == 0 and epoch + 1 < cfg.epochs:
            field, state, grad_sum, record = _density_step(
                field, state, grad_sum / max(grad_steps, 1), dataset, pde, cfg, rng, record, evaluate)
            grad_steps = 0
        record.n_gaussians = field.n
        record.seconds = time.perf_counter() - tick
        report.records.append(record)
        if not full_batch or epoch + 1 == cfg.epochs:
            terms = evaluate(field, with_grad=False)
            _check_finite(terms, epoch)
            _fill(record, terms)
        if cfg.time_budget is not None and time.perf_counter() - start > cfg.time_budget:
            if full_batch and np.isnan(record.total):
                _fill(record, evaluate(field, with_grad=False))
            report.stopped_early = True
            break
    return field, report


def _fill(record: EpochRecord, terms) -> None:
    record.total, record.data, record.pde = terms.total, terms.data, terms.pde


def _density_step(field, state, mean_grad, dataset, pde, cfg, rng, record, evaluate):
    X = dataset.coords
    terms = evaluate(field, with_grad=False)
    errors = gaussian_errors(influence_matrix(field, X), terms.point_losses)
    chosen = select_densify(errors, cfg.densify)
    dres = densify(field, chosen, mean_grad, cfg.densify, rng, step=cfg.learning_rate)
    state.reindex(dres.parents)
    mres = merge(dres.field, X, cfg.densify)
    state.reindex(np.where(mres.parents >= 0, mres.parents, -1))
    record.n_split, record.n_clone, record.n_merged = dres.n_split, dres.n_clone, mres.n_removed
    log.debug("epoch %d: split %d, clone %d, merged away %d, N=%d", record.epoch,
              dres.n_split, dres.n_clone, mres.n_removed, mres.field.n)
    return mres.field, state, np.zeros((mres.field.n, field.q)), record
