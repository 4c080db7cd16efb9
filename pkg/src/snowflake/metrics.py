"""Training losses and evaluation metrics on point sets.

Distance functions accept plain ``N x 3`` arrays or :class:`Tensor` inputs.
With array inputs they return a float; with any Tensor input they return a
differentiable scalar Tensor whose nearest-neighbour matching (or EMD
assignment) is held fixed during differentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import assignment
from .assignment import Assignment
from .geometry import farthest_point_sample, nearest, nearest_indices
from .tensor import Tensor, as_tensor, discrete_choice, gather, norm, reduce

EXACT_EMD_LIMIT = 1024
JSD_RESOLUTION = 28


class DomainError(ValueError):
    pass


def _arr(pc) -> np.ndarray:
    arr = pc.data if isinstance(pc, Tensor) else np.asarray(pc, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an N x 3 point cloud, got shape {arr.shape}")
    if len(arr) == 0:
        raise ValueError("point set is empty")
    return arr


def _finish(value: Tensor, *inputs):
    if any(isinstance(x, Tensor) for x in inputs):
        return value
    return float(value.data)


def _directional(x, y, squared: bool = False) -> Tensor:
    """Per-point distance from each x to its nearest y."""
    _arr(x), _arr(y)
    idx = nearest_indices(x, y)
    diff = as_tensor(x) - gather(as_tensor(y), idx)
    return (diff * diff).sum(axis=-1) if squared else norm(diff, axis=-1)


def _reduce(d: Tensor, reduction: str) -> Tensor:
    if reduction == "sum":
        return d.sum()
    if reduction == "mean":
        return d.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def chamfer_l2(x, y, reduction: str = "sum", squared: bool = False):
    """Bidirectional nearest-neighbour Euclidean distance sum."""
    total = _reduce(_directional(x, y, squared), reduction) + _reduce(_directional(y, x, squared), reduction)
    return _finish(total, x, y)


def chamfer_l1(x, y, reduction: str = "sum"):
    """Half the bidirectional sum of nearest-neighbour Euclidean distances."""
    total = _reduce(_directional(x, y), reduction) + _reduce(_directional(y, x), reduction)
    return _finish(total * 0.5, x, y)


def partial_matching(x, y, reduction: str = "sum"):
    """One-directional: how far each point of ``x`` is from ``y``."""
    return _finish(_reduce(_directional(x, y), reduction), x, y)


def emd_assignment(x, y, mode: str = "auto", eps: float = 0.005) -> Assignment:
    xa, ya = _arr(x), _arr(y)
    if len(xa) != len(ya):
        raise ValueError(f"EMD needs equal sizes, got {len(xa)} and {len(ya)}")
    if mode == "auto":
        mode = "exact" if len(xa) <= EXACT_EMD_LIMIT else "auction"
    cost = assignment.euclidean_cost(xa, ya)
    if mode == "exact":
        perm = assignment.solve_exact(cost)
    elif mode == "auction":
        perm = assignment.solve_auction(cost, eps=eps)
    else:
        raise ValueError(f"unknown EMD mode {mode!r}")
    return Assignment(perm, float(cost[np.arange(len(perm)), perm].sum()))


def emd(x, y, mode: str = "auto", eps: float = 0.005, reduction: str = "mean"):
    """Earth Mover's distance and its matching; per-point average unless ``reduction='sum'``."""
    match = discrete_choice(lambda: emd_assignment(x, y, mode, eps))
    d = norm(as_tensor(x) - gather(as_tensor(y), match.perm), axis=-1)
    return _finish(_reduce(d, reduction), x, y), match


def downsample(gt, n: int, cache: dict | None = None) -> np.ndarray:
    """Ground truth reduced to ``n`` points by FPS from index 0."""
    pts = _arr(gt)
    if n > len(pts):
        raise ValueError(f"ground truth has {len(pts)} points, fewer than the {n} requested")
    if n == len(pts):
        return pts
    if cache is not None and n in cache:
        return cache[n]
    out = pts[farthest_point_sample(pts, n, 0)]
    if cache is not None:
        cache[n] = out
    return out


def pair_distance(pred, gt, base: str, reduction: str = "mean"):
    if base == "cd_l1":
        return chamfer_l1(pred, gt, reduction)
    if base == "cd_l2":
        return chamfer_l2(pred, gt, reduction)
    if base == "cd_l2_squared":
        return chamfer_l2(pred, gt, reduction, squared=True)
    if base == "emd":
        return emd(pred, gt, reduction=reduction)[0]
    if base == "cd_l2+emd":
        return chamfer_l2(pred, gt, reduction) + emd(pred, gt, reduction=reduction)[0]
    raise ValueError(f"unknown distance {base!r}")


def completion_loss(predictions: Sequence, gt, base: str = "cd_l1", reduction: str = "sum",
                    cache: dict | None = None):
    """Sum of ``base`` distances between each prediction and the ground truth downsampled to its size."""
    if not predictions:
        raise ValueError("no predictions")
    gt_arr = _arr(gt)
    for p in predictions:
        if len(_arr(p)) > len(gt_arr):
            raise ValueError(f"ground truth ({len(gt_arr)} points) is smaller than a prediction ({len(_arr(p))})")
    total = None
    for p in predictions:
        term = pair_distance(p, downsample(gt_arr, len(_arr(p)), cache), base, reduction)
        total = term if total is None else total + term
    return total


def total_loss(completion, preservation, weight: float = 1.0):
    return completion + weight * preservation


def f_score(pred, gt, threshold: float) -> float:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    precision, recall = precision_recall(pred, gt, threshold)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def precision_recall(pred, gt, threshold: float) -> tuple[float, float]:
    p, g = _arr(pred), _arr(gt)
    precision = float(np.mean(nearest(p, g)[1] <= threshold))
    recall = float(np.mean(nearest(g, p)[1] <= threshold))
    return precision, recall


def hausdorff(x, y) -> float:
    a, b = _arr(x), _arr(y)
    return float(max(nearest(a, b)[1].max(), nearest(b, a)[1].max()))


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for key, v in self.values.items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"metric {key}={v} must be finite and non-negative")
            if key in ("fscore", "cov", "1nna") and v > 1:
                raise ValueError(f"metric {key}={v} must lie in [0, 1]")

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self.values.items()]
        lines += [f"{k}={v}" for k, v in self.metadata.items()]
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return ",".join(self.values)

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.values.values())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                try:
                    values[key] = float(value)
                except ValueError:
                    pass
        return cls(values)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def fidelity_mmd(inputs: Sequence, outputs: Sequence, references: Sequence, cd: str = "cd_l2") -> MetricReport:
    """Input preservation (mean input-to-output distance) and minimal matching distance to references."""
    if not inputs or not outputs or not references:
        raise ValueError("fidelity/MMD need non-empty lists")
    if len(inputs) != len(outputs):
        raise ValueError("inputs and outputs must be aligned pairwise")
    fid = float(np.mean([partial_matching(i, o) / len(_arr(i)) for i, o in zip(inputs, outputs)]))
    mmd = float(np.mean([min(pair_distance(o, r, cd) for r in references) for o in outputs]))
    return MetricReport({"fidelity": fid, "mmd": mmd}, {"pairs": len(inputs), "references": len(references)})


def set_distance_matrix(a: Sequence, b: Sequence, base: str = "cd") -> np.ndarray:
    name = {"cd": "cd_l2", "emd": "emd"}.get(base, base)
    return np.array([[pair_distance(x, y, name) for y in b] for x in a], dtype=np.float64).reshape(len(a), len(b))


def coverage(dist_gen_ref: np.ndarray) -> float:
    """Fraction of references that are the nearest reference of some generated shape."""
    matched = np.argmin(dist_gen_ref, axis=1)
    return len(np.unique(matched)) / dist_gen_ref.shape[1]


def minimum_matching_distance(dist_gen_ref: np.ndarray) -> float:
    return float(dist_gen_ref.min(axis=0).mean())


def one_nn_accuracy(d_gg: np.ndarray, d_rr: np.ndarray, d_gr: np.ndarray) -> float:
    """Leave-one-out 1-NN two-sample accuracy; a tie with the other set counts as misclassified."""
    def correct(same: np.ndarray, other: np.ndarray) -> np.ndarray:
        same = same.astype(np.float64).copy()
        np.fill_diagonal(same, np.inf)
        return same.min(axis=1, initial=np.inf) < other.min(axis=1)

    hits = correct(d_gg, d_gr).sum() + correct(d_rr, d_gr.T).sum()
    return float(hits) / (len(d_gg) + len(d_rr))


def occupancy_histogram(clouds: Sequence, resolution: int = JSD_RESOLUTION) -> np.ndarray:
    counts = np.zeros(resolution ** 3)
    for pc in clouds:
        pts = _arr(pc)
        if np.any(np.abs(pts) > 1.0):
            raise DomainError("JSD needs clouds normalized to [-1, 1]^3")
        cells = np.clip(np.floor((pts + 1.0) * 0.5 * resolution).astype(np.intp), 0, resolution - 1)
        flat = (cells[:, 0] * resolution + cells[:, 1]) * resolution + cells[:, 2]
        counts += np.bincount(flat, minlength=resolution ** 3)
    return counts


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    """JS divergence in bits between two (unnormalized) histograms, with 0 log 0 = 0."""
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))

    return max(0.5 * kl(p) + 0.5 * kl(q), 0.0)


def generation_metrics(generated: Sequence, reference: Sequence, base: str = "cd") -> MetricReport:
    if not generated or not reference:
        raise ValueError("generation metrics need non-empty lists")
    jsd = jensen_shannon(occupancy_histogram(generated), occupancy_histogram(reference))
    d_gr = set_distance_matrix(generated, reference, base)
    d_gg = set_distance_matrix(generated, generated, base)
    d_rr = set_distance_matrix(reference, reference, base)
    return MetricReport(
        {
            "cov": coverage(d_gr),
            "mmd": minimum_matching_distance(d_gr),
            "1nna": one_nn_accuracy(d_gg, d_rr, d_gr),
            "jsd": jsd,
        },
        {"generated": len(generated), "reference": len(reference), "base": base},
    )


def evaluate_pair(pred, gt, threshold: float = 0.01, emd_limit: int = EXACT_EMD_LIMIT) -> MetricReport:
    """Per-sample completion metrics; EMD compares equal-size FPS subsets when sizes differ."""
    p, g = _arr(pred), _arr(gt)
    n = min(len(p), len(g))
    ps = p if len(p) == n else p[farthest_point_sample(p, n, 0)]
    gs = g if len(g) == n else g[farthest_point_sample(g, n, 0)]
    values = {
        "cd_l1": chamfer_l1(p, g, "mean"),
        "cd_l2": chamfer_l2(p, g, "mean", squared=True),
        "emd": emd(ps, gs, mode="exact" if n <= emd_limit else "auction")[0],
        "fscore": f_score(p, g, threshold),
        "hd": hausdorff(p, g),
    }
    return MetricReport(values, {"pred_points": len(p), "gt_points": len(g), "threshold": threshold})


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    keys = list(reports[0].values)
    return MetricReport({k: float(np.mean([r.values[k] for r in reports])) for k in keys}, {"samples": len(reports)})
