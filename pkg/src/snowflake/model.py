"""Snowflake point deconvolution network and its task arrangements."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import metrics
from .geometry import SetAbstraction, farthest_point_sample, knn_indices
from .nn import MLP, Module, Parameter, uniform_init
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    _node,
    as_tensor,
    concat,
    gather,
    reduce,
    repeat_rows,
    reshape,
    softmax,
    tanh,
)

TASKS = ("completion", "autoencode", "upsample")

FACTOR_PRESETS = {
    "pcn": (1, 4, 8),
    "completion3d": (1, 2, 2),
    "shapenet34": (1, 4, 4),
    "upsample": (1, 2, 2, 1),
}


@dataclass
class ModelConfig:
    task: str = "completion"
    factors: tuple[int, ...] = (1, 4, 8)
    n_c: int = 256
    n_0: int = 512
    dim_feat: int = 512
    dim_point: int = 128
    k: int = 16
    encoder: str = "pointnet"
    encoder_widths: tuple[int, ...] = (128, 256)
    sa_centroids: tuple[int, ...] = (512, 128)
    sa_neighbors: int = 16
    seed_width: int = 128
    query_hidden: int = 256
    attention_hidden: int = 128
    loss_base: str = "cd_l1"
    reduction: str = "mean"
    weight: float = 1.0
    loss_stages: tuple[int, ...] = ()
    center_inputs: bool = True
    patch_size: int = 256
    init_seed: int = 0

    def __post_init__(self):
        self.factors = tuple(int(r) for r in self.factors)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.sa_centroids = tuple(int(w) for w in self.sa_centroids)
        self.loss_stages = tuple(int(s) for s in self.loss_stages)
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if not self.factors or any(r < 1 for r in self.factors):
            raise ValueError(f"upsampling factors must be non-empty and >= 1, got {self.factors}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("n_c", "n_0", "dim_feat", "dim_point", "seed_width", "query_hidden", "attention_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.encoder not in ("pointnet", "sa"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.weight < 0:
            raise ValueError("preservation weight must be non-negative")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "ModelConfig":
        """Standard arrangements: completion (1,4,8), auto-encoding (2,2) with N_c=N_0=512, upsampling (1,2,2,1)."""
        base: dict = {"task": task}
        if task == "autoencode":
            base.update(factors=(2, 2), n_c=512, n_0=512, loss_base="cd_l2+emd")
        elif task == "upsample":
            base.update(factors=(1, 2, 2, 1), loss_base="cd_l2", loss_stages=(1, 3, 4))
        base.update(overrides)
        return cls(**base)

    def output_size(self, n_input: int | None = None) -> int:
        n = self.n_0 if self.task != "upsample" else (n_input or self.patch_size)
        return n * int(np.prod(self.factors))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# point-wise splitting

def point_wise_splitting(h, bank) -> Tensor:
    """Each parent row of ``h[N, C]`` yields ``r`` child rows: child k = sum_m h[m] * bank[m, k].

    ``bank`` has shape ``[C, r, C_out]``; children are ordered parent-major.
    The forward sum runs over ``m`` in ascending order so it reproduces a
    plain nested loop bit for bit.
    """
    h, bank = as_tensor(h), as_tensor(bank)
    if h.ndim != 2 or bank.ndim != 3 or h.shape[1] != bank.shape[0]:
        raise DimensionError(f"feature width {h.shape} does not match kernel bank {bank.shape}")
    n, c = h.shape
    _, r, c_out = bank.shape
    out = np.zeros((n, r, c_out))
    for m in range(c):
        out += h.data[:, m, None, None] * bank.data[m]

    def backward(g):
        g2 = g.reshape(n, r * c_out)
        flat = bank.data.reshape(c, r * c_out)
        return g2 @ flat.T, (h.data.T @ g2).reshape(c, r, c_out)

    return _node(out.reshape(n * r, c_out), (h, bank), backward, "split")


class PointwiseSplit(Module):
    def __init__(self, c_in: int, r: int, c_out: int, rng: np.random.Generator):
        self.kernel_bank = Parameter(uniform_init(rng, (c_in, r, c_out), c_in))

    @property
    def r(self) -> int:
        return self.kernel_bank.shape[1]

    def __call__(self, h: Tensor) -> Tensor:
        return point_wise_splitting(h, self.kernel_bank)


# skip-transformer

class SkipTransformer(Module):
    """Value from (query, key); per-channel softmax attention over k-NN of MLP(query - neighbour key)."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.value_mlp = MLP([2 * dim, hidden, dim], rng)
        self.relation_mlp = MLP([dim, hidden, dim], rng)

    def __call__(self, query: Tensor, key: Tensor | None, points, k: int):
        key = query if key is None else key
        n, dim = query.shape
        if key.shape != query.shape:
            raise DimensionError(f"key {key.shape} and query {query.shape} differ")
        if k > n:
            raise ValueError(f"neighbour count {k} exceeds point count {n}")
        pts = points.data if isinstance(points, Tensor) else np.asarray(points)
        nbrs = knn_indices(pts, pts, k)
        value = self.value_mlp(query, key)
        relation = reshape(query, (n, 1, dim)) - gather(key, nbrs)
        attention = softmax(self.relation_mlp(relation), axis=1)
        context = reduce(attention * gather(value, nbrs), axis=1, mode="sum")
        return value + context, attention


# SPD

@dataclass
class SpdState:
    points: Tensor
    shape_code: Tensor
    prev_displacement: Tensor | None = None
    per_point: Tensor | None = None

    def __post_init__(self):
        n = self.points.shape[0]
        for name in ("prev_displacement", "per_point"):
            t = getattr(self, name)
            if t is not None and t.shape[0] != n:
                raise DimensionError(f"{name} has {t.shape[0]} rows for {n} points")


@dataclass
class SplitTrace:
    layer: int
    parent_index: np.ndarray
    parent_coords: np.ndarray
    child_coords: np.ndarray

    @property
    def child_index(self) -> np.ndarray:
        return np.arange(len(self.child_coords))


@dataclass
class SpdOutput:
    state: SpdState
    displacement: Tensor
    attention: Tensor
    context: Tensor


class SPD(Module):
    def __init__(self, r: int, dim_feat: int, dim: int, k: int, rng: np.random.Generator,
                 query_hidden: int = 256, attention_hidden: int = 128, layer_index: int = 0):
        self.r = r
        self.k = k
        self.layer_index = layer_index
        self.query_mlp = MLP([3 + dim_feat, query_hidden, dim], rng)
        self.skip = SkipTransformer(dim, attention_hidden, rng)
        self.split = PointwiseSplit(dim, r, dim, rng)
        self.feature_mlp = MLP([2 * dim, dim, dim], rng)
        self.displacement_mlp = MLP([dim, max(dim // 2, 1), 3], rng)

    def __call__(self, state: SpdState) -> SpdOutput:
        pts = state.points
        n = pts.shape[0]
        code = gather(state.shape_code, np.zeros(n, dtype=np.intp))
        q = self.query_mlp(pts, code)
        h, attention = self.skip(q, state.prev_displacement, pts, min(self.k, n))
        children = concat([self.split(h), repeat_rows(h, self.r)], axis=-1)
        feat = self.feature_mlp(children)
        delta = tanh(self.displacement_mlp(feat))
        if not np.all(np.isfinite(delta.data)):
            raise NumericError(f"non-finite displacement in SPD layer {self.layer_index}")
        new_points = repeat_rows(pts, self.r) + delta
        return SpdOutput(SpdState(new_points, state.shape_code, feat), delta, attention, h)


# seeds and encoders

class SeedGenerator(Module):
    def __init__(self, dim_feat: int, n_c: int, width: int, dim: int, rng: np.random.Generator):
        self.split = PointwiseSplit(dim_feat, n_c, width, rng)
        self.mlp = MLP([width + dim_feat, dim, max(dim // 2, 1), 3], rng)

    def __call__(self, code: Tensor, partial=None, n_0: int | None = None):
        feats = self.split(code)
        coarse = self.mlp(feats, gather(code, np.zeros(feats.shape[0], dtype=np.intp)))
        if partial is None:
            return coarse, coarse
        merged = concat([coarse, as_tensor(partial)], axis=0)
        if n_0 > merged.shape[0]:
            raise ValueError(f"N_0={n_0} exceeds the {merged.shape[0]} merged seed candidates")
        return coarse, gather(merged, farthest_point_sample(merged, n_0, 0))


class PointNetEncoder(Module):
    def __init__(self, widths: Sequence[int], dim_feat: int, rng: np.random.Generator):
        self.mlp = MLP([3, *widths, dim_feat], rng)

    def __call__(self, pc) -> Tensor:
        feats = self.mlp(as_tensor(pc))
        return reshape(reduce(feats, axis=0, mode="max"), (1, -1))


class SetAbstractionEncoder(Module):
    def __init__(self, centroids: Sequence[int], k: int, dim_feat: int, rng: np.random.Generator):
        m1, m2 = centroids
        self.sa1 = SetAbstraction(m1, k, [3, 64, 128], rng)
        self.sa2 = SetAbstraction(m2, k, [3 + 128, 128, 256], rng)
        self.sa3 = SetAbstraction(1, m2, [3 + 256, 256, dim_feat], rng)

    def __call__(self, pc) -> Tensor:
        pts = as_tensor(pc)
        if pts.shape[0] < self.sa1.m:
            raise ValueError(f"cloud of {pts.shape[0]} points is smaller than the first sampling size {self.sa1.m}")
        c1, f1 = self.sa1(pts)
        c2, f2 = self.sa2(c1, f1)
        _, f3 = self.sa3(c2, f2)
        return f3


def feature_extract(encoder: Module, pc) -> Tensor:
    return encoder(pc)


# full model

@dataclass
class Prediction:
    coarse: Tensor | None
    seeds: Tensor
    stages: list[Tensor]
    displacements: list[Tensor]
    attention: list[Tensor]
    traces: list[SplitTrace]
    shape_code: Tensor
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    @property
    def output(self) -> Tensor:
        return self.stages[-1]


def _unit_box(pc: np.ndarray) -> tuple[np.ndarray, float]:
    lo, hi = pc.min(axis=0), pc.max(axis=0)
    scale = float((hi - lo).max() / 2)
    return (lo + hi) / 2, scale if scale > 0 else 1.0


class SnowflakeNet(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self._cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        if cfg.encoder == "pointnet":
            self.encoder = PointNetEncoder(cfg.encoder_widths, cfg.dim_feat, rng)
        else:
            self.encoder = SetAbstractionEncoder(cfg.sa_centroids, cfg.sa_neighbors, cfg.dim_feat, rng)
        if cfg.task != "upsample":
            n_c = cfg.n_0 if cfg.task == "autoencode" else cfg.n_c
            self.seed = SeedGenerator(cfg.dim_feat, n_c, cfg.seed_width, cfg.dim_point, rng)
        for i, r in enumerate(cfg.factors, 1):
            setattr(self, f"spd{i}", SPD(r, cfg.dim_feat, cfg.dim_point, cfg.k, rng,
                                         cfg.query_hidden, cfg.attention_hidden, layer_index=i))
        self.name_parameters()

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def spds(self) -> list[SPD]:
        return [getattr(self, f"spd{i}") for i in range(1, len(self._cfg.factors) + 1)]

    def decode(self, code: Tensor, seeds: Tensor):
        return snowflake_decode(code, seeds, self.spds)

    def forward(self, cloud) -> Prediction:
        pts = np.asarray(cloud.data if isinstance(cloud, Tensor) else cloud, dtype=np.float64)
        cfg = self._cfg
        center, scale = _unit_box(pts) if cfg.center_inputs else (np.zeros(3), 1.0)
        local = (pts - center) / scale
        code = self.encoder(local)
        coarse = None
        if cfg.task == "upsample":
            seeds = Tensor(local)
        elif cfg.task == "autoencode":
            coarse, seeds = self.seed(code)
        else:
            if cfg.n_0 > cfg.n_c + len(local):
                raise ValueError(f"N_0={cfg.n_0} exceeds N_c + |partial| = {cfg.n_c + len(local)}")
            coarse, seeds = self.seed(code, local, cfg.n_0)
        stages, deltas, attention, traces = self.decode(code, seeds)

        def world(t: Tensor) -> Tensor:
            return t * scale + center

        for tr in traces:
            tr.parent_coords = tr.parent_coords * scale + center
            tr.child_coords = tr.child_coords * scale + center
        return Prediction(
            coarse=None if coarse is None else world(coarse),
            seeds=world(seeds),
            stages=[world(s) for s in stages],
            displacements=deltas,
            attention=attention,
            traces=traces,
            shape_code=code,
            center=center,
            scale=scale,
        )

    __call__ = forward

    def loss(self, pred: Prediction, target, partial=None, cache: dict | None = None) -> Tensor:
        cfg = self._cfg
        red = cfg.reduction
        if cfg.task == "completion":
            preds = ([pred.coarse] if pred.coarse is not None else []) + self._loss_stage_list(pred)
            loss = metrics.completion_loss(preds, target, cfg.loss_base, red, cache)
            if partial is not None and cfg.weight:
                keep = metrics.partial_matching(np.asarray(partial), pred.output, red)
                loss = metrics.total_loss(loss, keep, cfg.weight)
            return loss
        if cfg.task == "autoencode":
            preds = [pred.seeds] + self._loss_stage_list(pred)
            return metrics.completion_loss(preds, target, cfg.loss_base, red, cache)
        return metrics.completion_loss(self._loss_stage_list(pred), target, cfg.loss_base, red, cache)

    def _loss_stage_list(self, pred: Prediction) -> list[Tensor]:
        cfg = self._cfg
        if cfg.loss_stages:
            return [pred.stages[i - 1] for i in cfg.loss_stages]
        if cfg.task == "autoencode":
            return [pred.stages[-1]]
        return list(pred.stages)


def spd_forward(state: SpdState, spd: SPD) -> SpdOutput:
    return spd(state)


def snowflake_decode(code: Tensor, seeds: Tensor, spds: Sequence[SPD]):
    """Thread the state through stacked SPDs; returns stages, displacements, attention and split traces."""
    state = SpdState(as_tensor(seeds), code)
    stages, deltas, attention, traces = [], [], [], []
    for i, spd in enumerate(spds, 1):
        out = spd(state)
        parents = state.points.data
        child = out.state.points
        parent_index = np.repeat(np.arange(len(parents)), spd.r)
        traces.append(SplitTrace(i, parent_index, parents[parent_index].copy(), child.data.copy()))
        stages.append(child)
        deltas.append(out.displacement)
        attention.append(out.attention)
        state = out.state
    return stages, deltas, attention, traces


def build_model(task: str, config: ModelConfig | None = None, **overrides) -> SnowflakeNet:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    cfg = ModelConfig.for_task(task, **overrides) if config is None else replace(config, task=task, **overrides)
    return SnowflakeNet(cfg)


def zero_displacements(model: SnowflakeNet) -> None:
    """Zero every final displacement layer so each SPD only duplicates its parents."""
    for spd in model.spds:
        spd.displacement_mlp.last.weight.data[...] = 0.0
        spd.displacement_mlp.last.bias.data[...] = 0.0


# upsampling of whole clouds

def upsample_cloud(model: SnowflakeNet, cloud, n_out: int | None = None, overlap: float = 2.0) -> np.ndarray:
    """Upsample a full cloud patch-wise: FPS-seeded k-NN patches, each upsampled, then FPS back to ``n_out``."""
    cfg = model.config
    pts = np.asarray(cloud, dtype=np.float64)
    ratio = int(np.prod(cfg.factors))
    n_out = n_out or ratio * len(pts)
    size = min(cfg.patch_size, len(pts))
    n_patches = max(1, int(np.ceil(overlap * len(pts) / size)))
    n_patches = min(n_patches, len(pts))
    centers = farthest_point_sample(pts, n_patches, 0)
    patches = knn_indices(pts[centers], pts, size)
    dense = np.concatenate([model(pts[idx]).output.data for idx in patches], axis=0)
    if n_out > len(dense):
        raise ValueError(f"cannot produce {n_out} points from {len(dense)} upsampled candidates")
    return dense[farthest_point_sample(dense, n_out, 0)]
