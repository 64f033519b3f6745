"""Run configuration: dataclasses plus a line-oriented ``key = value`` format.

Keys are the field names of the section dataclasses and are unique across
sections, so a config file is flat.  Precedence is flag > file > default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DataConfig

ATTENTION_MODES = ("both", "acoustics_only", "text_only")
STAGES = ("rnnt", "delib_ce", "mwer", "joint")


@dataclass
class ModelConfig:
    enc_layers: int = 2
    enc_hidden: int = 32
    enc_proj: int = 16
    time_reduction_after: int = 1
    time_reduction_factor: int = 2
    pred_layers: int = 1
    pred_hidden: int = 32
    pred_proj: int = 16
    joint_dim: int = 32
    d_emb: int = 16
    bidi_layers: int = 1
    bidi_hidden: int = 32
    bidi_proj: int = 32
    ae: bool = False
    ae_layers: int = 2
    ae_hidden: int = 32
    dec_layers: int = 1
    dec_hidden: int = 32
    heads: int = 4
    att_dim: int = 32
    ctx_dim: int = 32
    attention: str = "both"
    init_scale: float = 0.05

    def __post_init__(self):
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if not 0 <= self.time_reduction_after < self.enc_layers:
            raise ValueError("time_reduction_after must be < enc_layers")
        if self.time_reduction_factor < 1:
            raise ValueError("time_reduction_factor must be >= 1")
        if self.att_dim % self.heads:
            raise ValueError("heads must divide att_dim")


@dataclass
class TrainConfig:
    stage: str = "rnnt"
    steps: int = 200
    batch_size: int = 16
    lr: float = 0.01
    optimizer: str = "sgd"
    lr_schedule: str = "constant"
    clip_norm: float = 5.0
    alpha: float = 0.01
    lam: float = 1.0
    b_mwer: int = 4
    augment_sigma: float = 0.0
    augment_copies: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.alpha < 0 or self.lam < 0 or self.augment_sigma < 0:
            raise ValueError("alpha, lam and augment_sigma must be non-negative")
        if self.augment_copies < 1:
            raise ValueError("augment_copies must be >= 1")
        if self.stage == "mwer" and self.b_mwer < 2:
            raise ValueError("MWER needs b_mwer >= 2")


@dataclass
class DecodeConfig:
    b1: int = 8
    b2: int = 8
    hyps: int = 8
    decode: str = "beam"
    max_symbols: int = 4
    length_norm: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.b1 < 1 or self.b2 < 1 or self.hyps < 1:
            raise ValueError("b1, b2 and hyps must be >= 1")
        if self.decode not in ("beam", "rescore"):
            raise ValueError(f"unknown decode mode {self.decode!r}")


@dataclass
class Config:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)


_SECTIONS = ("data", "model", "train", "decode")


class ConfigError(ValueError):
    pass


def _key_table() -> dict[str, tuple[str | None, dataclasses.Field]]:
    table: dict[str, tuple[str | None, dataclasses.Field]] = {}
    for f in fields(Config):
        if f.name not in _SECTIONS:
            table[f.name] = (None, f)
    for section in _SECTIONS:
        for f in fields(type(getattr(Config(), section))):
            if f.name in table:
                raise AssertionError(f"duplicate config key {f.name}")
            table[f.name] = (section, f)
    return table


KEYS = _key_table()


def _coerce(raw: str, f: dataclasses.Field, key: str):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        try:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(raw, KEYS[key][1], key)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def build_config(*layers: dict[str, object]) -> Config:
    """Merge value dicts left to right (later wins) over the defaults."""
    merged: dict[str, object] = {}
    for layer in layers:
        for key, value in layer.items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            if value is not None:
                merged[key] = value
    top = {k: v for k, v in merged.items() if KEYS[k][0] is None}
    sections = {}
    for section in _SECTIONS:
        cls = type(getattr(Config(), section))
        kwargs = {k: v for k, v in merged.items() if KEYS[k][0] == section}
        try:
            sections[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return Config(**top, **sections)


def parse_config(path=None, overrides: dict[str, object] | None = None) -> Config:
    file_values = {}
    if path is not None:
        p = Path(path)
        file_values = parse_config_text(p.read_text(encoding="utf-8"), str(p))
    return build_config(file_values, overrides or {})


def config_values(cfg: Config) -> dict[str, object]:
    out: dict[str, object] = {}
    for key, (section, _) in KEYS.items():
        holder = cfg if section is None else getattr(cfg, section)
        out[key] = getattr(holder, key)
    return out


def format_config(cfg: Config) -> str:
    lines = []
    for key, value in config_values(cfg).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
