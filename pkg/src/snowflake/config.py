"""Flat ``key=value`` run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .train import OptimizerConfig


class ConfigError(ValueError):
    pass


# model fields that the run config owns directly
_RUN_OWNED = {"init_seed"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps: int = 1000
    seed: int = 0
    manifest: str = ""
    out_dir: str = "run"

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.optim.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.optim.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        self.model = dataclasses.replace(self.model, init_seed=self.seed)

    def items(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [(k, getattr(self, k)) for k in ("steps", "seed", "manifest", "out_dir")]
        out += [(f.name, getattr(self.model, f.name)) for f in dataclasses.fields(self.model) if f.name not in _RUN_OWNED]
        out += [(f.name, getattr(self.optim, f.name)) for f in dataclasses.fields(self.optim)]
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def with_overrides(self, **kw) -> "RunConfig":
        return from_mapping({**{k: _format(v) for k, v in self.items()}, **{k: _format(v) for k, v in kw.items()}})


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def from_mapping(values: dict[str, str]) -> RunConfig:
    defaults = RunConfig()
    model_defaults = {f.name: getattr(defaults.model, f.name) for f in dataclasses.fields(ModelConfig)}
    # task-specific defaults apply before explicit keys
    task = values.get("task", "completion")
    try:
        model_defaults.update(ModelConfig.for_task(task).as_dict())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    optim_defaults = dataclasses.asdict(defaults.optim)
    run_defaults = {k: getattr(defaults, k) for k in ("steps", "seed", "manifest", "out_dir")}
    model_kw, optim_kw, run_kw = {}, {}, {}
    for key, raw in values.items():
        for table, out in ((run_defaults, run_kw), (model_defaults, model_kw), (optim_defaults, optim_kw)):
            if key in table and key not in _RUN_OWNED:
                try:
                    out[key] = _parse(raw, table[key])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from None
                break
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        model = ModelConfig(**{**model_defaults, **model_kw})
        return RunConfig(model=model, optim=OptimizerConfig(**{**optim_defaults, **optim_kw}), **run_kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_text(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = raw
    return from_mapping(values)


def load(path) -> RunConfig:
    """Read a config file; a relative ``manifest`` or ``out_dir`` resolves against the file's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_text(text, str(path))
    base = path.resolve().parent
    if cfg.manifest and not Path(cfg.manifest).is_absolute():
        cfg.manifest = str(base / cfg.manifest)
    if not Path(cfg.out_dir).is_absolute():
        cfg.out_dir = str(base / cfg.out_dir)
    return cfg
