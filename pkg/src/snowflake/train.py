"""Deterministic Adam training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ShapeSample
from .geometry import knn_indices
from .metrics import chamfer_l1
from .model import SnowflakeNet
from .nn import Adam
from .tensor import NumericError, backward

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 1
    lr_decay: float = 1.0
    lr_decay_every: int = 0


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    best_loss: float = math.inf
    best_step: int = -1
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    seconds: float = 0.0


def training_pair(model: SnowflakeNet, sample: ShapeSample, rng: np.random.Generator):
    """(network input, ground truth, partial-for-preservation) for one sample under the model's task."""
    task = model.config.task
    if task == "completion":
        return sample.partial, sample.complete, sample.partial
    if task == "autoencode":
        return sample.complete, sample.complete, None
    ratio = int(np.prod(model.config.factors))
    size = model.config.patch_size
    gt_size = min(size * ratio, len(sample.complete))
    if gt_size < size * ratio:
        raise ValueError(f"upsampling sample has {len(sample.complete)} points, needs {size * ratio}")
    center = sample.complete[rng.integers(len(sample.complete))]
    patch = sample.complete[knn_indices(center[None], sample.complete, gt_size)[0]]
    sparse = patch[np.sort(rng.choice(gt_size, size, replace=False))]
    return sparse, patch, None


def train(
    model: SnowflakeNet,
    dataset: Sequence[ShapeSample],
    optimizer: OptimizerConfig,
    steps: int,
    rng_seed: int = 0,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(rng_seed)
    params = model.parameters()
    opt = Adam(params, optimizer.lr, (optimizer.beta1, optimizer.beta2), optimizer.eps, optimizer.weight_decay)
    caches: dict[int, dict] = {}
    result = TrainResult()
    start = time.perf_counter()
    for step in range(steps):
        if optimizer.lr_decay_every and step and step % optimizer.lr_decay_every == 0:
            opt.lr *= optimizer.lr_decay
        opt.zero_grad()
        total = 0.0
        for _ in range(optimizer.batch_size):
            i = int(rng.integers(len(dataset)))
            inp, gt, partial = training_pair(model, dataset[i], rng)
            cache = caches.setdefault(i, {}) if model.config.task != "upsample" else None
            loss = model.loss(model(inp), gt, partial, cache) * (1.0 / optimizer.batch_size)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at step {step} (sample {i})")
            backward(loss)
            total += value
        if total < result.best_loss:
            result.best_loss = total
            result.best_step = step
            result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        opt.step()
        result.losses.append(total)
        if on_step is not None:
            on_step(step, total)
        if step % 50 == 0:
            log.info("step %d loss %.6g", step, total)
    result.seconds = time.perf_counter() - start
    return result


def predict(model: SnowflakeNet, cloud) -> np.ndarray:
    return model(cloud).output.data


def mean_cd_l1(model: SnowflakeNet, dataset: Sequence[ShapeSample]) -> float:
    """Mean per-point CD-L1 of the final stage against each sample's complete cloud."""
    values = []
    for sample in dataset:
        inp = sample.partial if model.config.task == "completion" else sample.complete
        values.append(chamfer_l1(predict(model, inp), sample.complete, "mean"))
    return float(np.mean(values))
