"""Run configuration: a JSON tree of dataclasses with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .noise import noise_config_from_dict
from .training import FinetuneConfig, TrainConfig

__all__ = [
    "ConfigError",
    "DataConfig",
    "DenoiserRunConfig",
    "GenerateConfig",
    "EvalConfig",
    "FinetuneRunConfig",
    "MixConfig",
    "RunConfig",
    "from_dict",
    "load_config",
    "apply_overrides",
    "RUN_DIR_ENV",
]

RUN_DIR_ENV = "PNGAN_RUN_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train: str | None = None  # real paired dataset used for D_d, the GAN and finetuning
    test: str | None = None  # held-out real paired dataset
    clean: str | None = None  # clean images to generate from (dataset dir or png dir)


@dataclass(frozen=True)
class DenoiserRunConfig:
    depth: int = 8
    width: int = 64
    steps: int = 5000
    batch: int = 8
    patch: int = 64
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    seed: int = 0
    checkpoint: str | None = None  # defaults to <run_dir>/denoiser.ckpt


@dataclass(frozen=True)
class GenerateConfig:
    checkpoint: str | None = None  # defaults to <run_dir>/gan.ckpt
    out: str | None = None  # defaults to <run_dir>/generated
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    generated: str | None = None  # defaults to <run_dir>/generated
    baseline: str | None = None  # synthesized from data.test clean images when unset
    denoiser: str | None = None  # optional checkpoint scored by PSNR/SSIM on data.test
    patch: int = 8
    max_patches: int = 2000
    bandwidth: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class FinetuneRunConfig:
    base: str | None = None  # defaults to <run_dir>/denoiser.ckpt
    generated: str | None = None  # defaults to <run_dir>/generated
    q: float = 0.6
    mix_seed: int = 0
    steps: int = 1000
    batch: int = 8
    patch: int = 64
    lr: float = 1e-4
    seed: int = 0

    def schedule(self) -> FinetuneConfig:
        return FinetuneConfig(steps=self.steps, batch=self.batch, patch=self.patch, lr=self.lr,
                              seed=self.seed)


@dataclass(frozen=True)
class MixConfig:
    generated: str | None = None
    q: float = 0.6
    seed: int = 0
    out: str | None = None  # defaults to <run_dir>/mixed


def _default_noise():
    return {"kind": "awgn", "sigma_n": 50.0, "seed": 0}


@dataclass(frozen=True)
class RunConfig:
    run_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    noise: dict = field(default_factory=_default_noise)
    denoiser: DenoiserRunConfig = field(default_factory=DenoiserRunConfig)
    gan: TrainConfig = field(default_factory=TrainConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    finetune: FinetuneRunConfig = field(default_factory=FinetuneRunConfig)
    mix: MixConfig = field(default_factory=MixConfig)

    def __post_init__(self):
        try:
            noise_config_from_dict(self.noise)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"noise: {exc}") from exc

    @property
    def noise_config(self):
        return noise_config_from_dict(self.noise)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved_run_dir(self) -> Path:
        return Path(os.environ.get(RUN_DIR_ENV) or self.run_dir)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def from_dict(cls, data: dict, where: str = ""):
    """Build dataclass ``cls`` from ``data``, recursing into nested dataclasses.

    Unknown keys raise :class:`ConfigError`.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if _is_dataclass_type(tp):
            value = from_dict(tp, value, f"{where}{name}.")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where.rstrip('.') or 'config'}: {exc}") from exc


def _set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted}: {k} is not a section")
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    tree = json.loads(json.dumps(tree))
    for item in overrides:
        item = item[2:] if item.startswith("--") else item
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        _set_path(tree, key, _parse_value(value))
    return tree


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    tree = {}
    if path is not None:
        try:
            tree = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    tree = apply_overrides(tree, list(overrides))
    return from_dict(RunConfig, tree)

