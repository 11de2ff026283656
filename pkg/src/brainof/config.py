"""Run configuration: typed blocks, range validation, JSON I/O and ``--set`` overrides."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .signal import Modality


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


@dataclass
class ModelConfig:
    d_model: int = 32
    n_latents: int = 16
    n_layers: int = 2
    n_heads: int = 2
    patch_len: int = 16
    max_seq_len: int = 256
    n_experts: int = 4
    top_k: int = 2
    n_shared: int = 1
    expert_hidden: int | None = None
    arness_layers: int = 1
    conv_channels: tuple = (4, 4, 4)
    layer_scale_init: float = 1e-4

    def validate(self):
        for name in ("d_model", "n_latents", "n_heads", "patch_len", "max_seq_len", "n_experts", "arness_layers"):
            _require(getattr(self, name) >= 1, f"model.{name} must be >= 1")
        _require(self.n_layers >= 0, "model.n_layers must be >= 0")
        _require(self.n_shared >= 0, "model.n_shared must be >= 0")
        _require(1 <= self.top_k <= self.n_experts, "model.top_k must lie in [1, n_experts]")
        _require(
            self.d_model % self.n_heads == 0 and (self.d_model // self.n_heads) % 4 == 0,
            "model.d_model / model.n_heads must be a multiple of 4",
        )
        _require(self.expert_hidden is None or self.expert_hidden >= 1, "model.expert_hidden must be >= 1")
        _require(len(self.conv_channels) >= 1 and all(c >= 1 for c in self.conv_channels),
                 "model.conv_channels must be a non-empty list of positive widths")
        _require(self.layer_scale_init > 0, "model.layer_scale_init must be > 0")

    @property
    def hidden(self):
        return self.expert_hidden or 2 * self.d_model


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 8
    lr: float = 3e-3
    warmup_lr: float = 3e-5
    warmup_steps: int | None = None
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    clip: float = 5.0
    alpha: float = 0.8
    smooth_l1_beta: float = 1.0
    mask_mean: float = 0.7
    mask_std: float = 0.05
    gamma: float = 1e-3
    seed: int = 0

    def validate(self):
        _require(self.steps >= 0, "train.steps must be >= 0")
        _require(self.batch_size >= 1, "train.batch_size must be >= 1")
        _require(self.lr > 0 and self.warmup_lr >= 0, "train.lr must be > 0 and train.warmup_lr >= 0")
        _require(self.warmup_steps is None or self.warmup_steps >= 0, "train.warmup_steps must be >= 0")
        _require(self.weight_decay >= 0, "train.weight_decay must be >= 0")
        _require(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "train.betas must be two values in [0, 1)")
        _require(self.eps > 0 and self.clip > 0, "train.eps and train.clip must be > 0")
        _require(0 <= self.alpha <= 1, "train.alpha must lie in [0, 1]")
        _require(self.smooth_l1_beta > 0, "train.smooth_l1_beta must be > 0")
        _require(0 <= self.mask_mean <= 1 and self.mask_std >= 0, "train.mask_mean in [0, 1], mask_std >= 0")
        _require(self.gamma >= 0, "train.gamma must be >= 0")

    def resolved_warmup(self):
        if self.warmup_steps is not None:
            return min(self.warmup_steps, max(self.steps - 1, 0))
        return int(round(self.steps * 8 / 150))


@dataclass
class FinetuneConfig:
    task: str = "classification"
    n_classes: int = 2
    mode: str = "full"
    epochs: int = 20
    batch_size: int = 16
    lr: float = 3e-3
    warmup_lr: float = 3e-5
    warmup_fraction: float = 0.1
    weight_decay: float = 0.1
    betas: tuple = (0.9, 0.99)
    dropout: float = 0.0
    drop_path: float = 0.0
    seed: int = 0

    def validate(self):
        _require(self.task in ("classification", "regression"), "finetune.task must be classification or regression")
        _require(self.mode in ("probe", "full"), "finetune.mode must be probe or full")
        _require(self.task == "regression" or self.n_classes >= 2, "finetune.n_classes must be >= 2")
        _require(self.epochs >= 0 and self.batch_size >= 1, "finetune.epochs >= 0 and batch_size >= 1")
        _require(self.lr > 0 and self.warmup_lr >= 0, "finetune.lr must be > 0")
        _require(0 <= self.warmup_fraction < 1, "finetune.warmup_fraction must lie in [0, 1)")
        _require(self.weight_decay >= 0, "finetune.weight_decay must be >= 0")
        _require(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "finetune.betas must be two values in [0, 1)")
        _require(0 <= self.dropout < 1 and 0 <= self.drop_path < 1, "finetune.dropout/drop_path must lie in [0, 1)")


@dataclass
class DataConfig:
    modalities: list = field(default_factory=lambda: ["EEG"])
    n_samples: int = 32
    class_balance: float = 0.5
    marker_channels: list | None = None
    path: str | None = None
    test_path: str | None = None
    test_fraction: float = 0.0

    def validate(self):
        _require(len(self.modalities) >= 1, "data.modalities must not be empty")
        for m in self.modalities:
            try:
                Modality.parse(m)
            except Exception as exc:
                raise ConfigError(f"data.modalities: {exc}") from exc
        _require(self.n_samples >= 1, "data.n_samples must be >= 1")
        _require(0 <= self.class_balance <= 1, "data.class_balance must lie in [0, 1]")
        _require(0 <= self.test_fraction < 1, "data.test_fraction must lie in [0, 1)")
        _require(self.marker_channels is None or all(int(c) >= 0 for c in self.marker_channels),
                 "data.marker_channels must be non-negative channel indices")


_BLOCKS = {"model": ModelConfig, "train": TrainConfig, "finetune": FinetuneConfig, "data": DataConfig}
_TUPLE_FIELDS = {"conv_channels", "betas"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        for name in _BLOCKS:
            try:
                getattr(self, name).validate()
            except TypeError as exc:
                raise ConfigError(f"{name}: wrongly typed value ({exc})") from exc
        return self

    def to_dict(self):
        out = asdict(self)
        for block in out.values():
            for key in _TUPLE_FIELDS & block.keys():
                block[key] = list(block[key])
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(doc) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown config block(s): {sorted(unknown)}")
        blocks = {}
        for name, klass in _BLOCKS.items():
            values = doc.get(name)
            values = {} if values is None else values
            if not isinstance(values, dict):
                raise ConfigError(f"config block {name!r} must be an object")
            known = {f.name for f in fields(klass)}
            bad = set(values) - known
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {sorted(bad)}")
            values = {k: tuple(v) if k in _TUPLE_FIELDS else v for k, v in values.items()}
            blocks[name] = _typed(klass, values)
        return cls(**blocks).validate()

    @classmethod
    def load(cls, path=None, overrides=()):
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        for item in overrides:
            apply_override(doc, item)
        return cls.from_dict(doc)


def _typed(klass, values):
    """Coerce JSON scalars to the field's declared type with explicit errors."""
    defaults = klass()
    out = {}
    for key, value in values.items():
        default = getattr(defaults, key)
        try:
            if isinstance(default, bool) or value is None:
                out[key] = value
            elif isinstance(default, int) and not isinstance(default, bool):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
                if not math.isfinite(out[key]):
                    raise ValueError
            else:
                out[key] = value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{klass.__name__}.{key}: invalid value {value!r}") from exc
    return klass(**out)


def apply_override(doc, item):
    """Apply one ``block.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like block.key=value")
    path, raw = item.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {path!r} must be block.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    block, key = parts
    doc.setdefault(block, {})
    if not isinstance(doc[block], dict):
        raise ConfigError(f"config block {block!r} must be an object")
    doc[block][key] = value
    return doc
