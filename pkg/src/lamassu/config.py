"""Run configuration: dataclasses plus an INI-style file format.

Sections and keys mirror the dataclass fields one-to-one; unknown sections or
keys are rejected. ``PRESETS`` holds named overrides applied before the file.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "UNI"
    d: int = 64
    heads: int = 4
    blocks: int = 2
    clusters: int = 2
    separate_layers: int = 1
    shared_layers: int = 1
    d_p: int = 128
    d_j: int = 256
    pred_layers: int = 1
    chunk_frames: int = 4
    target_lid_for_encoder: bool = True
    subsample: bool = False
    dropout: float = 0.1
    frame_ms: float = 40.0

    def validate(self) -> None:
        if self.variant.upper() not in ("SPE", "UNI"):
            raise ConfigError(f"model.variant must be SPE or UNI, got {self.variant!r}")
        self.variant = self.variant.upper()
        if self.d % self.heads:
            raise ConfigError("model.d must be divisible by model.heads")
        for name in ("blocks", "clusters", "chunk_frames", "pred_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")


@dataclass
class LossConfig:
    alpha: float = 0.75
    beta: float = 0.4
    ctc: bool = False
    lid_in_phase2: bool = True


@dataclass
class ScheduleConfig:
    total_steps: int = 3000
    all_ones_fraction: float = 0.5

    def validate(self) -> None:
        if not 0.0 < self.all_ones_fraction <= 1.0:
            raise ConfigError("schedule.all_ones_fraction must lie in (0, 1]")
        if self.total_steps < 1:
            raise ConfigError("schedule.total_steps must be >= 1")


@dataclass
class DataConfig:
    seed: int = 1
    n_train: int = 6000
    n_dev: int = 600
    n_test: int = 600
    d_x: int = 16
    sigma: float = 0.1
    span_min: int = 2
    span_max: int = 4
    tail_frames: int = 3
    min_len: int = 3
    max_len: int = 12
    overlap: int = 4


@dataclass
class OptimConfig:
    lr: float = 1e-3
    warmup: int = 400
    batch: int = 32
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    seed: int = 0
    log_every: int = 50


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.schedule.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for section, values in d.items():
            apply_overrides(cfg, {f"{section}.{k}": v for k, v in values.items()})
        return cfg.validate()

    def to_ini(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            for f in dataclasses.fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                if isinstance(value, bool):
                    value = "on" if value else "off"
                lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = ("model", "loss", "schedule", "data", "optim")

# 24 encoder layers as 6 blocks x (2 separate + 2 shared); 160 ms chunks at a 10 ms hop.
PRESETS: dict[str, dict[str, object]] = {
    "toy": {},
    "full-scale": {
        "model.blocks": 6,
        "model.separate_layers": 2,
        "model.shared_layers": 2,
        "model.pred_layers": 2,
        "model.chunk_frames": 16,
        "model.frame_ms": 10.0,
        "model.d": 512,
        "model.heads": 8,
        "model.d_p": 512,
        "model.d_j": 512,
    },
}


def _coerce(value, target_type, key: str):
    if isinstance(value, str):
        text = value.strip()
        if target_type is bool:
            low = text.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ConfigError(f"{key}: expected on/off, got {value!r}")
        try:
            return target_type(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {target_type.__name__}") from None
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, target_type):
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}")
    return value


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides, rejecting unknown names."""
    for dotted, value in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"unknown config key {dotted!r} (expected section.key)")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        obj = getattr(cfg, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if key not in fields:
            raise ConfigError(f"unknown config key {dotted!r}")
        ftype = fields[key].type
        target = _TYPES.get(ftype, ftype) if isinstance(ftype, str) else ftype
        setattr(obj, key, _coerce(value, target, dotted))
    return cfg


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then preset, then file, then explicit overrides (flags win)."""
    cfg = RunConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        apply_overrides(cfg, PRESETS[preset])
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(Path(path).read_text(encoding="utf-8"))
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        values = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                values[f"{section}.{key}"] = value
        apply_overrides(cfg, values)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate()
