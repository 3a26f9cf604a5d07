"""Adaptive density control: error-driven split/clone and merging of
Gaussians whose influence patterns over the training points coincide."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .field import GaussianField
from .splatting import influence_matrix, predict


@dataclass(frozen=True)
class DensifyConfig:
    densify_threshold: float = 2.0
    split_clone_threshold: float = 2.0e-4
    merge_threshold: float = 0.9
    interval: int = 100

    def __post_init__(self):
        if not (self.densify_threshold > 0 and self.split_clone_threshold > 0 and self.interval > 0):
            raise ValueError("density-control thresholds and interval must be positive")
        if not 0 < self.merge_threshold <= 1:
            raise ValueError("merge threshold must lie in (0, 1]")


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(n: int, edges) -> list[list[int]]:
    """Partition 0..n-1 into connected components.

    Components are listed by their smallest member and each is sorted.
    """
    uf = UnionFind(n)
    for a, b in edges:
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"edge ({a}, {b}) has an endpoint outside [0, {n})")
        uf.union(int(a), int(b))
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def gaussian_errors(influence, point_losses) -> np.ndarray:
    """eps_i = sum_k L_k z_ki / ||z_i||_2, zero for Gaussians with no influence."""
    Z = sparse.csc_matrix(influence)
    L = np.asarray(point_losses, dtype=float)
    if Z.shape[0] != L.size:
        raise ValueError(f"influence has {Z.shape[0]} rows, got {L.size} losses")
    weighted = np.asarray(Z.T @ L).ravel()
    norms = np.sqrt(np.asarray(Z.multiply(Z).sum(axis=0)).ravel())
    out = np.zeros(Z.shape[1])
    live = norms > 0
    out[live] = weighted[live] / norms[live]
    return out


def select_densify(errors, cfg: DensifyConfig = DensifyConfig()) -> np.ndarray:
    """Indices whose error exceeds median * densify_threshold."""
    errors = np.asarray(errors, dtype=float)
    return np.flatnonzero(errors > np.median(errors) * cfg.densify_threshold)


@dataclass
class DensifyResult:
    field: GaussianField
    parents: np.ndarray   # row i of the new field came from old row parents[i], or -1 if new
    n_split: int
    n_clone: int


ADAM_EPS = 1e-8


def densify(field: GaussianField, indices, position_grads, cfg: DensifyConfig = DensifyConfig(),
            rng=None, step: float = 1e-2) -> DensifyResult:
    """Split or clone the selected Gaussians whose averaged position gradient
    norm exceeds ``cfg.split_clone_threshold``.

    ``position_grads`` is (N, q): the position gradient averaged over the
    steps since the last density-control pass. A Gaussian whose largest
    scale is below the field median of largest scales is cloned (the copy
    takes one Adam step from fresh moments, ``-step * g / (|g| + eps)`` per
    coordinate, so it moves at most ``step``); otherwise it is split into
    two children with halved scales, drawn uniformly from the parent's
    one-sigma box. Split parents are removed; new rows are appended.
    """
    rng = np.random.default_rng(rng)
    indices = np.asarray(indices, dtype=int)
    grads = np.asarray(position_grads, dtype=float).reshape(field.n, field.q)
    keep = np.ones(field.n, dtype=bool)
    if indices.size == 0:
        return DensifyResult(field, np.arange(field.n), 0, 0)

    h = field.h
    big = h.max(axis=1)
    median_scale = np.median(big)
    norms = np.linalg.norm(grads, axis=1)
    new_mu, new_lh, new_v = [], [], []
    n_split = n_clone = 0
    for i in indices:
        if norms[i] <= cfg.split_clone_threshold:
            continue
        if big[i] < median_scale:
            new_mu.append(field.mu[i] - step * grads[i] / (np.abs(grads[i]) + ADAM_EPS))
            new_lh.append(field.log_h[i])
            new_v.append(field.values[i])
            n_clone += 1
        else:
            for _ in range(2):
                new_mu.append(field.mu[i] + rng.uniform(-1.0, 1.0, field.q) * h[i])
                new_lh.append(field.log_h[i] - np.log(2.0))
                new_v.append(field.values[i])
            keep[i] = False
            n_split += 1
    if not new_mu:
        return DensifyResult(field, np.arange(field.n), 0, 0)
    parents = np.concatenate([np.flatnonzero(keep), np.full(len(new_mu), -1)])
    out = GaussianField(
        np.vstack([field.mu[keep], new_mu]),
        np.vstack([field.log_h[keep], new_lh]),
        np.vstack([field.values[keep], new_v]),
        field.z_threshold,
    )
    return DensifyResult(out, parents, n_split, n_clone)


def similarity_edges(field: GaussianField, points, threshold: float) -> list[tuple[int, int]]:
    """Pairs (i < j) whose influence vectors over ``points`` have cosine
    similarity above ``threshold``."""
    Z = influence_matrix(field, points).tocsc()
    norms = np.sqrt(np.asarray(Z.multiply(Z).sum(axis=0)).ravel())
    gram = sparse.triu(Z.T @ Z, k=1).tocoo()
    denom = norms[gram.row] * norms[gram.col]
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, gram.data / denom, 0.0)
    hit = sim > threshold
    order = np.lexsort((gram.col[hit], gram.row[hit]))
    return list(zip(gram.row[hit][order].tolist(), gram.col[hit][order].tolist()))


@dataclass
class MergeResult:
    field: GaussianField
    parents: np.ndarray   # old row index for untouched Gaussians, -1 for merged ones
    n_removed: int


def merge(field: GaussianField, points, cfg: DensifyConfig = DensifyConfig()) -> MergeResult:
    """Merge each connected cluster of mutually similar Gaussians into one.

    The merged Gaussian takes the mean centre and mean scale of its
    cluster; its value is the pre-merge field's prediction at that centre.
    Survivors are ordered by the smallest original index in their cluster.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("merging needs at least one training point")
    clusters = connected_components(field.n, similarity_edges(field, points, cfg.merge_threshold))
    if all(len(c) == 1 for c in clusters):
        return MergeResult(field, np.arange(field.n), 0)

    merged = [c for c in clusters if len(c) > 1]
    centres = np.array([field.mu[c].mean(axis=0) for c in merged])
    new_values = predict(field, centres)
    mu, log_h, values, parents = [], [], [], []
    m = 0
    for c in clusters:
        if len(c) == 1:
            i = c[0]
            mu.append(field.mu[i])
            log_h.append(field.log_h[i])
            values.append(field.values[i])
            parents.append(i)
        else:
            mu.append(centres[m])
            log_h.append(np.log(field.h[c].mean(axis=0)))
            values.append(new_values[m])
            parents.append(-1)
            m += 1
    out = GaussianField(np.array(mu), np.array(log_h), np.array(values), field.z_threshold)
    return MergeResult(out, np.array(parents), field.n - out.n)
