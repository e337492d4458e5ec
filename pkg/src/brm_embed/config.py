"""Run configuration with ``flag > config file > default`` precedence.

Config files are flat UTF-8 ``key = value`` text. ``#`` starts a comment and
keys use the CLI flag names with underscores (``max_epochs = 200``).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidConfig

LOSSES = ("brm", "brm+ce", "contrastive", "triplet", "lifted")


def _int_list(value) -> tuple:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {value!r}")


@dataclass
class RunConfig:
    seed: int = 7
    data: str | None = None
    classes: int = 10
    per_class: int = 100
    dim: int = 16
    sigma: float = 0.05
    layers: tuple = (16, 32, 16)
    activation: str = "relu"
    init: str = "he"
    loss: str = "brm"
    bins: int = 75
    contrastive_margin: float = 0.5
    triplet_margin: float = 0.2
    lifted_margin: float = 1.0
    ce_weight: float = 1.0
    classes_per_batch: int = 8
    samples_per_class: int = 8
    lr: float = 1e-3
    gamma: float = 0.5
    decay_every: int = 50
    max_epochs: int = 300
    patience: int = 20
    val_fraction: float = 0.2
    crop: float = 0.875
    augment: bool = True
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.loss not in LOSSES:
            raise InvalidConfig(f"loss must be one of {', '.join(LOSSES)}")
        if self.bins < 2:
            raise InvalidConfig("bins must be >= 2")
        if len(self.layers) < 1 or min(self.layers) < 1 or self.layers[-1] < 2:
            raise InvalidConfig("layers must be positive with output dimension >= 2")
        if self.classes_per_batch < 2 or self.samples_per_class < 2:
            raise InvalidConfig("batches need >= 2 classes and >= 2 samples per class")
        if self.max_epochs < 0 or self.patience < 1 or self.decay_every < 1:
            raise InvalidConfig("max_epochs >= 0, patience >= 1 and decay_every >= 1 required")
        if self.lr <= 0 or not 0 < self.gamma <= 1 or self.ce_weight < 0:
            raise InvalidConfig("lr > 0, 0 < gamma <= 1 and ce_weight >= 0 required")
        if min(self.contrastive_margin, self.triplet_margin, self.lifted_margin) <= 0 \
                or self.contrastive_margin > 1:
            raise InvalidConfig("margins must be positive (contrastive margin <= 1)")
        if not 0 < self.val_fraction < 1 or not 0 < self.crop <= 1:
            raise InvalidConfig("val_fraction must lie in (0, 1) and crop in (0, 1]")
        if self.data is None and (self.classes < 2 or self.per_class < 2 or self.sigma < 0):
            raise InvalidConfig("synthetic data needs classes >= 2, per_class >= 2, sigma >= 0")
        if self.data is not None and not Path(self.data).is_file():
            raise InvalidConfig(f"dataset {self.data} does not exist")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layers"] = list(self.layers)
        return d

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class


def _converter(f: dataclasses.Field):
    if f.name == "layers":
        return _int_list
    if f.name == "augment":
        return _bool
    default = f.default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELDS:
            raise InvalidConfig(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_config(overrides: dict | None = None, config_path=None) -> RunConfig:
    """Merge defaults, config file and explicit overrides (``None`` values are skipped)."""
    merged = {}
    if config_path is not None:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {config_path}: {exc}") from None
        merged.update(parse_config_text(text))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in FIELDS:
            raise InvalidConfig(f"unknown option {key!r}")
        try:
            kwargs[key] = _converter(FIELDS[key])(value)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {key}: {value!r} ({exc})") from None
    return RunConfig(**kwargs).validate()
