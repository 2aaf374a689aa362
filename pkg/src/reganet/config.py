"""Flat ``key=value`` configuration files and the training configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .attention import NetworkConfig


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def format_config(mapping: dict[str, object]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in mapping.items())


def write_config(path, mapping: dict[str, object]) -> None:
    Path(path).write_text(format_config(mapping))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list, frozenset, set)):
        items = sorted(v) if isinstance(v, (frozenset, set)) else v
        return ",".join(str(x) for x in items)
    if v is None:
        return ""
    return str(v)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _tags(s: str) -> frozenset:
    return frozenset(x.strip().upper() for x in s.split(",") if x.strip() and x.strip().lower() != "none")


_NET_KEYS = {
    "net.stage_widths": ("stage_widths", _ints),
    "net.blocks_per_stage": ("blocks_per_stage", int),
    "net.attention_at": ("attention_at", _tags),
    "net.fusion": ("fusion", _bool),
    "net.rg_blocks": ("rg_blocks", int),
    "net.num_classes": ("num_classes", int),
    "net.input": ("input", _ints),
    "mask.size": ("mask_size", int),
    "mask.r1": ("mask_r1", lambda s: float(s) if s else None),
    "mask.variant": ("mask_variant", str),
}


def network_from_mapping(mapping: dict[str, str], base: NetworkConfig | None = None) -> NetworkConfig:
    kwargs = {}
    for key, (attr, conv) in _NET_KEYS.items():
        if key in mapping:
            try:
                kwargs[attr] = conv(mapping[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    cfg = (base or NetworkConfig()).with_(**kwargs)
    return cfg.validate()


def network_to_mapping(cfg: NetworkConfig) -> dict[str, object]:
    return {key: getattr(cfg, attr) for key, (attr, _) in _NET_KEYS.items()}


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_step: int = 30
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    max_steps: int = 0              # 0 = no cap
    wall_clock: bool = True         # false writes 0 in the seconds column
    data_source: str = "synthetic"
    data_seed: int = 0
    train_per_class: int = 100
    val_per_class: int = 25
    data_period: float = 6.0
    data_contrast: float = 1.0
    train_images: str = ""
    train_labels: str = ""
    val_images: str = ""
    val_labels: str = ""
    out_dir: str = "runs/default"
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def validate(self) -> "TrainConfig":
        if self.lr <= 0 or self.lr_step <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("lr, lr_step, epochs and batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.max_steps < 0:
            raise ConfigError("weight_decay and max_steps must be non-negative")
        if self.data_source not in ("synthetic", "idx"):
            raise ConfigError(f"data.source must be synthetic or idx, got {self.data_source!r}")
        if self.data_source == "idx" and not (self.train_images and self.train_labels
                                              and self.val_images and self.val_labels):
            raise ConfigError("data.source=idx needs data.train_images/labels and data.val_images/labels")
        self.network.validate()
        return self


_TRAIN_KEYS = {
    "train.lr": ("lr", float),
    "train.momentum": ("momentum", float),
    "train.weight_decay": ("weight_decay", float),
    "train.lr_step": ("lr_step", int),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.seed": ("seed", int),
    "train.max_steps": ("max_steps", int),
    "train.wall_clock": ("wall_clock", _bool),
    "train.out_dir": ("out_dir", str),
    "data.source": ("data_source", str),
    "data.seed": ("data_seed", int),
    "data.train_per_class": ("train_per_class", int),
    "data.val_per_class": ("val_per_class", int),
    "data.period": ("data_period", float),
    "data.contrast": ("data_contrast", float),
    "data.train_images": ("train_images", str),
    "data.train_labels": ("train_labels", str),
    "data.val_images": ("val_images", str),
    "data.val_labels": ("val_labels", str),
}


def train_config_from_mapping(mapping: dict[str, str]) -> TrainConfig:
    known = set(_TRAIN_KEYS) | set(_NET_KEYS)
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, (attr, conv) in _TRAIN_KEYS.items():
        if key in mapping:
            try:
                kwargs[attr] = conv(mapping[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    try:
        network = network_from_mapping(mapping)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return TrainConfig(network=network, **kwargs).validate()


def train_config_to_mapping(cfg: TrainConfig) -> dict[str, object]:
    out = {key: getattr(cfg, attr) for key, (attr, _) in _TRAIN_KEYS.items()}
    out.update(network_to_mapping(cfg.network))
    return out

