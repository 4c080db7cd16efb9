"""Sampling and neighbourhood kernels on point clouds."""
from __future__ import annotations

import numpy as np

from .nn import MLP, Module
from .tensor import Tensor, as_tensor, concat, discrete_choice, gather, reduce, reshape

# rows of the pairwise-distance block processed at once
_CHUNK = 1024


class SizeError(ValueError):
    """A requested count exceeds the number of available points."""


def _coords(pc) -> np.ndarray:
    arr = pc.data if isinstance(pc, Tensor) else np.asarray(pc, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an N x 3 point cloud, got shape {arr.shape}")
    return arr


def _sq(diff: np.ndarray) -> np.ndarray:
    # fixed left-to-right order so distance ties are reproducible
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    return x * x + y * y + z * z


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _sq(a[:, None, :] - b[None, :, :])


def farthest_point_sample(pc, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices starting from ``seed_index``.

    Ties go to the lowest index.
    """
    pts = _coords(pc)
    n = len(pts)
    if not 1 <= m <= n:
        raise SizeError(f"cannot sample {m} points from a cloud of {n}")
    if not 0 <= seed_index < n:
        raise IndexError(f"seed index {seed_index} out of range for {n} points")

    def compute():
        chosen = np.empty(m, dtype=np.intp)
        chosen[0] = seed_index
        best = _sq(pts - pts[seed_index])
        for i in range(1, m):
            nxt = int(np.argmax(best))
            chosen[i] = nxt
            np.minimum(best, _sq(pts - pts[nxt]), out=best)
        return chosen

    return discrete_choice(compute)


def _knn_block(d2: np.ndarray, k: int) -> np.ndarray:
    n_ref = d2.shape[1]
    if k == n_ref:
        return np.argsort(d2, axis=1, kind="stable")
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
    ties = (d2 <= kth[:, None]).sum(axis=1) > k
    # order candidates by (distance, index)
    vals = np.take_along_axis(d2, part, axis=1)
    order = np.lexsort((part, vals), axis=1)
    out = np.take_along_axis(part, order, axis=1)
    for row in np.flatnonzero(ties):
        out[row] = np.argsort(d2[row], kind="stable")[:k]
    return out


def knn_indices(queries, reference, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest reference points per query, nearest first, ties to lowest index."""
    q, ref = _coords(queries), _coords(reference)
    if not 1 <= k <= len(ref):
        raise SizeError(f"k={k} neighbours requested from {len(ref)} reference points")

    def compute():
        blocks = [_knn_block(squared_distances(q[s:s + _CHUNK], ref), k) for s in range(0, len(q), _CHUNK)]
        return np.concatenate(blocks, axis=0) if blocks else np.empty((0, k), dtype=np.intp)

    return discrete_choice(compute)


def nearest(queries, reference) -> tuple[np.ndarray, np.ndarray]:
    """Nearest reference index and Euclidean distance for each query (no gradient, no recording).

    Candidates come from the expanded ``|a|^2 + |b|^2 - 2ab`` form; returned
    distances are recomputed from coordinate differences.
    """
    q, ref = _coords(queries), _coords(reference)
    idx = np.empty(len(q), dtype=np.intp)
    ref_sq = np.einsum("ij,ij->i", ref, ref)
    for s in range(0, len(q), _CHUNK):
        block = q[s:s + _CHUNK]
        d2 = ref_sq[None, :] - 2.0 * (block @ ref.T)
        idx[s:s + _CHUNK] = np.argmin(d2, axis=1)
    diff = q - ref[idx]
    return idx, np.sqrt(np.einsum("ij,ij->i", diff, diff))


def nearest_indices(queries, reference) -> np.ndarray:
    return discrete_choice(lambda: nearest(queries, reference)[0])


def group_features(features, neighbors) -> Tensor:
    """Gather ``features[N, C]`` rows into a ``[Q, k, C]`` block."""
    return gather(as_tensor(features), np.asarray(neighbors), axis=0)


class SetAbstraction(Module):
    """FPS centroids, k-NN grouping, shared MLP on (relative xyz, features), max-pool."""

    def __init__(self, m: int, k: int, widths, rng: np.random.Generator):
        self.m = m
        self.k = k
        self.mlp = MLP(widths, rng)

    def __call__(self, pc, features: Tensor | None = None, seed_index: int = 0):
        return set_abstraction(pc, features, self.m, self.k, self.mlp, seed_index)


def set_abstraction(pc, features, m: int, k: int, mlp, seed_index: int = 0):
    pts = as_tensor(pc)
    centers_idx = farthest_point_sample(pts, m, seed_index)
    centers = gather(pts, centers_idx)
    nbrs = knn_indices(centers.data, pts.data, k)
    rel = group_features(pts, nbrs) - reshape(centers, (m, 1, 3))
    grouped = rel if features is None else concat([rel, group_features(features, nbrs)], axis=-1)
    pooled = reduce(mlp(grouped), axis=1, mode="max")
    return centers, pooled
