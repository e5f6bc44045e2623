"""YAML/JSON config files mapped onto the training dataclasses.

Top-level keys are :class:`~mtaffect.trainer.TrainConfig` fields; ``model``,
``data`` (with nested ``missing``) and ``noise`` are sections. Unknown keys
anywhere raise :class:`ConfigError`. Example::

    mode: mt-sc
    epochs: 20
    learning_rate: 0.0005
    model: {input_dim: 16, hidden_dims: [64, 64]}
    data:
      n_groups: 200
      group_size: 25
      missing: {fully_labeled_fraction: 0.33, presence: [0.5, 0.5, 0.5]}
    noise: {kind: multiplicative-scale, magnitude: 0.1}
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .data import DataGenConfig, MissingPattern
from .model import ModelConfig
from .teacher import NoiseConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_NESTED = {
    (TrainConfig, "model"): ModelConfig,
    (TrainConfig, "data"): DataGenConfig,
    (TrainConfig, "noise"): NoiseConfig,
    (DataGenConfig, "missing"): MissingPattern,
}
_TUPLES = {(TrainConfig, "loss_weights"), (MissingPattern, "presence")}


def from_dict(cls, raw, where: str = ""):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in raw.items():
        path = f"{where}.{key}" if where else key
        sub = _NESTED.get((cls, key))
        if sub is not None:
            value = from_dict(sub, value, path)
        elif (cls, key) in _TUPLES:
            value = tuple(float(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def to_dict(obj) -> dict:
    out = dataclasses.asdict(obj)

    def fix(d):
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, dict):
                fix(v)
        return d

    return fix(out)


def load_config(path) -> TrainConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    cfg = from_dict(TrainConfig, raw)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
