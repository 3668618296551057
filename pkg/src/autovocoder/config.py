"""Run configuration: one flat record, stored as ``key = value`` lines.

Blank lines and ``#`` comments are ignored. Tuples are comma-separated,
booleans are ``true``/``false``. Unknown keys are an error. See
:data:`SCHEMA` for every key and README.md for their meaning.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .discriminators import DiscriminatorConfig
from .dsp import StftConfig
from .losses import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # signal
    sample_rate: int = 22050
    window_size: int = 1024
    hop: int = 256
    center_pad: bool = True
    pad_mode: str = "reflect"
    n_mels: int = 80
    # model
    representation_size: int = 128
    head: str = "cartesian"
    embedding_dropout: float = 0.1
    seed: int = 0
    # training
    batch_size: int = 2
    segment_len: int = 8192
    steps: int = 2000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_b1: float = 0.8
    adam_b2: float = 0.99
    adam_eps: float = 1e-8
    lr_decay: float = 0.999
    steps_per_epoch: int = 0
    checkpoint_interval: int = 500
    # loss weights
    lambda_mel: float = 45.0
    lambda_time: float = 100.0
    lambda_fm: float = 2.0
    lambda_adv: float = 1.0
    # discriminators
    mpd_periods: tuple = (2, 3, 5, 7, 11)
    msd_scales: int = 3
    mpd_channels: tuple = (8, 16, 32, 32)
    msd_channels: tuple = (16, 32, 64, 64)

    def __post_init__(self):
        if self.segment_len % self.hop:
            raise ConfigError(f"segment_len {self.segment_len} is not a multiple of hop {self.hop}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    # ------------------------------------------------------------- sub-configs
    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_size, self.hop, "hann", self.center_pad, self.pad_mode)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(stft=self.stft, representation_size=self.representation_size,
                           head=self.head, embedding_dropout=self.embedding_dropout, seed=self.seed)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(mel=self.lambda_mel, time=self.lambda_time, fm=self.lambda_fm,
                           adv=self.lambda_adv)

    @property
    def discriminators(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(tuple(self.mpd_periods), self.msd_scales,
                                   tuple(self.mpd_channels), tuple(self.msd_channels),
                                   seed=self.seed + 1)

    def replace(self, **changes) -> "Config":
        unknown = set(changes) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text format
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = parse_value(key, value)
        return (base or cls()).replace(**values)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


SCHEMA = {f.name: type(f.default) for f in fields(Config)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key: str, value: str):
    kind = SCHEMA[key]
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError(value)
            return low == "true"
        if kind is tuple:
            return tuple(int(v) for v in value.split(",") if v.strip())
        return kind(value)
    except ValueError as err:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from err


def default_seed() -> int:
    """Seed from ``AV_SEED`` when set, else 0."""
    return int(os.environ.get("AV_SEED", "0"))
