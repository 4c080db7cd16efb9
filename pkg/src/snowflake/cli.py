"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration problems, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint, config, data, metrics, plotting
from .assignment import ConvergenceError
from .model import SnowflakeNet, upsample_cloud
from .tensor import NumericError
from .train import train

log = logging.getLogger("snowflake")

CONFIG_NAME = "config.txt"
METRIC_SETS = {
    "full": ("cd_l1", "cd_l2", "emd", "fscore", "hd"),
    "chamfer": ("cd_l1", "cd_l2", "fscore", "hd"),
}


class UsageError(Exception):
    pass


# synth

def cmd_synth(kinds: list[str], n: int, count: int, seed: int, out_dir, crop: float = 0.25) -> Path:
    """Write ``count`` complete clouds, their viewpoint-cropped partials and a manifest."""
    if count < 0 or n < 1 or not 0 <= crop < 1:
        raise UsageError("need count >= 0, n >= 1 and 0 <= crop < 1")
    for k in kinds:
        if k not in data.SHAPES:
            raise UsageError(f"unknown shape kind {k!r}; expected one of {', '.join(data.SHAPES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        complete = data.synth_shape(kind, n, int(rng.integers(2**31)))
        sample = data.crop_viewpoint(complete, int(round(crop * n)), data.random_viewpoint(rng), kind)
        c_path, p_path = out / f"complete_{i:04d}.xyz", out / f"partial_{i:04d}.xyz"
        data.write_xyz(c_path, sample.complete)
        data.write_xyz(p_path, sample.partial)
        entries.append(data.ManifestEntry(c_path, p_path, kind))
    manifest = out / "manifest.tsv"
    data.write_manifest(manifest, entries)
    return manifest


# train

def cmd_train(config_path, seed: int | None = None, out_dir=None) -> Path:
    cfg = config.load(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out_dir is not None:
        overrides["out_dir"] = str(Path(out_dir).resolve())
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    if not cfg.manifest:
        raise config.ConfigError("config has no manifest")
    if not Path(cfg.manifest).exists():
        raise config.ConfigError(f"manifest not found: {cfg.manifest}")
    samples = data.load_samples(cfg.manifest)
    if not samples:
        raise config.ConfigError(f"manifest {cfg.manifest} lists no samples")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "seed.txt").write_text(f"seed={cfg.seed}\n")
    cfg.save(out / CONFIG_NAME)

    model = SnowflakeNet(cfg.model)
    log.info("training %d parameters on %d samples for %d steps", sum(p.data.size for p in model.parameters()),
             len(samples), cfg.steps)
    result = train(model, samples, cfg.optim, cfg.steps, rng_seed=cfg.seed)
    checkpoint.save(out / "model.ckpt", model.state_dict())
    checkpoint.save(out / "best.ckpt", result.best_state or model.state_dict())
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(result.losses):
            fh.write(f"{step},{loss!r}\n")
    plotting.plot_loss(result.losses, out / "loss.png")
    return out


# loading a trained model

def load_model(ckpt_path, config_path=None) -> SnowflakeNet:
    ckpt_path = Path(ckpt_path)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    config_path = Path(config_path) if config_path else ckpt_path.parent / CONFIG_NAME
    if not config_path.exists():
        raise UsageError(f"no model config at {config_path}; pass --config")
    cfg = config.load(config_path)
    model = SnowflakeNet(cfg.model)
    model.load_state_dict(checkpoint.load(ckpt_path))
    return model


def _infer(model: SnowflakeNet, cloud: np.ndarray, n_out: int | None = None):
    if model.config.task == "upsample":
        return upsample_cloud(model, cloud, n_out), None
    pred = model(cloud)
    return pred.output.data, pred


# complete

def cmd_complete(ckpt_path, input_path, out_path, config_path=None, all_stages: bool = False) -> list[Path]:
    model = load_model(ckpt_path, config_path)
    cloud = data.read_cloud(input_path)
    output, pred = _infer(model, cloud)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_cloud(out, output)
    written = [out]
    if all_stages and pred is not None:
        extra = [("pc", pred.coarse)] + [(f"p{i}", s) for i, s in enumerate(pred.stages[:-1], 1)]
        for tag, stage in extra:
            if stage is None:
                continue
            path = out.with_name(f"{out.stem}_{tag}{out.suffix or '.ply'}")
            data.write_cloud(path, stage.data)
            written.append(path)
    return written


# eval

def _report_rows(reports, labels, keys, out: Path) -> None:
    mean = metrics.mean_report(reports)
    with open(out / "metrics.csv", "w") as fh:
        fh.write("sample,label," + ",".join(keys) + "\n")
        for i, (rep, label) in enumerate(zip(reports, labels)):
            fh.write(f"{i},{label}," + ",".join(f"{rep[k]:.6g}" for k in keys) + "\n")
        fh.write("mean,," + ",".join(f"{mean[k]:.6g}" for k in keys) + "\n")
    plotting.plot_metrics([{k: r[k] for k in keys} for r in reports], [str(i) for i in range(len(reports))],
                          out / "metrics.png")
    (out / "mean.txt").write_text(mean.to_text())


def cmd_eval(ckpt_path, manifest_path, out_dir, config_path=None, metric_set: str = "full") -> Path:
    keys = METRIC_SETS[metric_set]
    model = load_model(ckpt_path, config_path)
    samples = data.load_samples(manifest_path)
    if not samples:
        raise UsageError(f"manifest {manifest_path} lists no samples")
    reports = []
    for s in samples:
        inp = s.complete if model.config.task == "autoencode" else s.partial
        output, _ = _infer(model, inp, len(s.complete))
        reports.append(metrics.evaluate_pair(output, s.complete))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _report_rows(reports, [s.label for s in samples], keys, out)
    return out / "metrics.csv"


def cmd_score(pred_path, gt_path, out_dir, metric_set: str = "full") -> Path:
    """Metrics between two stored clouds, no model involved."""
    keys = METRIC_SETS[metric_set]
    report = metrics.evaluate_pair(data.read_cloud(pred_path), data.read_cloud(gt_path))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _report_rows([report], [Path(pred_path).stem], keys, out)
    return out / "metrics.csv"


# trace

def cmd_trace(ckpt_path, input_path, out_dir, config_path=None) -> Path:
    """Per-layer PLY files (with parent indices) and ``px py pz cx cy cz`` edge lists."""
    model = load_model(ckpt_path, config_path)
    if model.config.task == "upsample":
        raise UsageError("trace needs a completion or auto-encoding model")
    pred = model(data.read_cloud(input_path))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data.write_ply(out / "layer_0.ply", pred.seeds.data)
    for tr in pred.traces:
        data.write_ply(out / f"layer_{tr.layer}.ply", tr.child_coords, {"parent": tr.parent_index})
        with open(out / f"edges_{tr.layer}.txt", "w") as fh:
            for p, c in zip(tr.parent_coords, tr.child_coords):
                fh.write(" ".join(f"{v:.9g}" for v in (*p, *c)) + "\n")
    plotting.plot_trace(pred.seeds.data, pred.traces, out / "trace.png")
    return out


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snowflake", description="Snowflake point deconvolution toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    p.add_argument("--kind", default="sphere", help="shape kind, or a comma list cycled over samples")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--crop", type=float, default=0.25, help="fraction removed from each partial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("complete", help="run a trained model on one cloud")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--all-stages", action="store_true")

    p = sub.add_parser("eval", help="per-sample and mean metrics over a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--metric-set", choices=sorted(METRIC_SETS), default="full")

    p = sub.add_parser("score", help="metrics between a predicted and a reference cloud")
    p.add_argument("prediction")
    p.add_argument("reference")
    p.add_argument("--out", required=True)
    p.add_argument("--metric-set", choices=sorted(METRIC_SETS), default="full")

    p = sub.add_parser("trace", help="export the point-splitting paths")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    return ap


def _dispatch(args) -> None:
    if args.command == "synth":
        path = cmd_synth(args.kind.split(","), args.n, args.count, args.seed, args.out, args.crop)
    elif args.command == "train":
        path = cmd_train(args.config, args.seed, args.out)
    elif args.command == "complete":
        path = cmd_complete(args.checkpoint, args.input, args.out, args.config, args.all_stages)[0]
    elif args.command == "eval":
        path = cmd_eval(args.checkpoint, args.manifest, args.out, args.config, args.metric_set)
    elif args.command == "score":
        path = cmd_score(args.prediction, args.reference, args.out, args.metric_set)
    else:
        path = cmd_trace(args.checkpoint, args.input, args.out, args.config)
    print(path)


def _threads() -> int:
    raw = os.environ.get("SPD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SPD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SPD_THREADS must be at least 1")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(_threads()):
            _dispatch(args)
    except (NumericError, ConvergenceError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (UsageError, config.ConfigError, checkpoint.CheckpointError, data.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
