"""Linear assignment solvers for Earth Mover's matching between equal-size sets."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Assignment:
    """``perm[i]`` is the index in Y matched to X[i]; ``cost`` sums the matched distances."""

    perm: np.ndarray
    cost: float

    def __post_init__(self):
        n = len(self.perm)
        if not np.array_equal(np.sort(self.perm), np.arange(n)):
            raise ValueError("assignment is not a bijection")


def euclidean_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)[:, None] + np.einsum("ij,ij->i", y, y)[None, :] - 2.0 * (x @ y.T)
    return np.sqrt(np.maximum(sq, 0.0))


def solve_exact(cost: np.ndarray) -> np.ndarray:
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.intp)
    perm[rows] = cols
    return perm


@numba.njit(cache=True)
def _auction_kernel(benefit, prices, target, step, max_bids):
    n = benefit.shape[0]
    bids = 0
    while True:
        owner = np.full(n, -1, np.int64)
        item_of = np.full(n, -1, np.int64)
        # unassigned bidders; a displaced owner is pushed back on top
        stack = np.arange(n - 1, -1, -1)
        top = n
        while top > 0:
            top -= 1
            i = stack[top]
            best = -np.inf
            second = -np.inf
            bj = -1
            for j in range(n):
                v = benefit[i, j] - prices[j]
                if v > best:
                    second = best
                    best = v
                    bj = j
                elif v > second:
                    second = v
            prices[bj] += best - second + step
            prev = owner[bj]
            owner[bj] = i
            item_of[i] = bj
            if prev >= 0:
                item_of[prev] = -1
                stack[top] = prev
                top += 1
            bids += 1
            if bids > max_bids:
                return item_of, False
        if step <= target:
            return item_of, True
        step = max(step / 5.0, target)


def solve_auction(cost: np.ndarray, eps: float = 0.005, max_bids: int | None = None) -> np.ndarray:
    """Gauss-Seidel auction with epsilon scaling for a minimum-cost perfect matching.

    The final bidding increment is ``eps * lower_bound / n`` where the lower
    bound is the larger of the row-minimum and column-minimum sums, so the
    returned total is within a factor ``1 + eps`` of optimal (down to a tiny
    absolute floor when the lower bound vanishes).
    """
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"auction needs a square cost matrix, got {cost.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if n <= 1:
        return np.zeros(n, dtype=np.intp)
    span = float(cost.max() - cost.min())
    lower = max(cost.min(axis=1).sum(), cost.min(axis=0).sum())
    target = max(eps * lower / n, 1e-9 * max(span, 1e-12) / n)
    step = max(span / 4.0, target)
    if max_bids is None:
        max_bids = 2000 * n * n
    perm, ok = _auction_kernel(-np.ascontiguousarray(cost, dtype=np.float64), np.zeros(n), target, step, max_bids)
    if not ok:
        raise ConvergenceError(f"auction did not converge within {max_bids} bids")
    return perm.astype(np.intp)
