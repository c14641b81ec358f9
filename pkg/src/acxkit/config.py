"""Run configuration: one JSON file, command-line flags win."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .acx.train import TrainConfig
from .encoder import EncoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    n_train: int = 64
    n_test: int = 32
    utterance_s: float = 2.0
    specs_per_utterance: int = 1
    per_subset: int = 50
    synthetic_noises: int = 6
    synthetic_rirs_per_room: int = 4


@dataclass
class QuadConfig:
    n_batches: int = 128
    batch_size: int = 16
    # per-factor inclusion probability when drawing training conditions
    presence: float = 0.5


@dataclass
class HeadConfig:
    hidden: int = 512
    dim_out: int = 1024
    normalize_output: bool = True


@dataclass
class TrainerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    steps: int = 2000
    checkpoint_every: int = 250


@dataclass
class EvalConfig:
    n_per_point: int = 32


@dataclass
class PathsConfig:
    out: str = "acx-work"
    noise_dirs: list = field(default_factory=list)
    rir_dirs: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    seed: int | None = None
    sample_rate_hz: int = 16000
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    quads: QuadConfig = field(default_factory=QuadConfig)
    encoder: dict = field(default_factory=dict)
    head: HeadConfig = field(default_factory=HeadConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def out(self) -> Path:
        return Path(self.paths.out)

    def encoder_config(self) -> EncoderConfig:
        enc = dict(self.encoder)
        enc.setdefault("sample_rate_hz", self.sample_rate_hz)
        try:
            return EncoderConfig.from_dict(enc)
        except TypeError as exc:
            raise ConfigError(f"bad encoder config: {exc}") from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.trainer.steps, batch_size=self.trainer.batch_size, lr=self.trainer.lr,
            beta1=self.trainer.beta1, beta2=self.trainer.beta2, eps=self.trainer.eps,
            hidden=self.head.hidden, dim_out=self.head.dim_out,
            normalize_output=self.head.normalize_output, seed=self.seed,
            checkpoint_every=self.trainer.checkpoint_every)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"paths": PathsConfig, "corpus": CorpusConfig, "quads": QuadConfig, "head": HeadConfig,
             "trainer": TrainerConfig, "eval": EvalConfig}


def _section(cls, data: Mapping[str, Any], name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return cls(**data)


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    top = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"[{key}] must be an object")
            kwargs[key] = _section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load(path: str | os.PathLike | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Read ``path`` (if given) and apply flag overrides; a seed is mandatory."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    cfg = from_dict(data)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.paths.out = out
    if cfg.seed is None:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
    return cfg
