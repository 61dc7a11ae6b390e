"""Experiment configuration: one JSON file with nested sections, plus
CLI flag overrides. Every command echoes the fully-resolved config."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .audio_core import StftConfig
from .evaluation import EvalOptions
from .mixer import MixPolicy
from .objectives import LossConfig
from .separators import BackboneConfig, ISRNetConfig, TcnConfig
from .trainer import TrainLoopConfig

DATA_ROOT_ENV = "MEDLEYSEP_DATA_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    sample_rate: int = 24000
    manifest: str = ""
    medleyvox_metadata: str = ""
    workers: int = 1
    mix: MixPolicy = MixPolicy()
    loss: LossConfig = LossConfig()
    backbone: BackboneConfig = BackboneConfig()
    isrnet: ISRNetConfig = ISRNetConfig()
    train: TrainLoopConfig = TrainLoopConfig()
    eval_options: EvalOptions = EvalOptions()


_TUPLE_FIELDS = {"n_rest_range", "detune_cents_range", "octave_choices",
                 "formant_ratio_range", "gain_range_db", "stft_resolutions",
                 "stem_paths"}


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected object for {cls.__name__}, got {type(data).__name__}")
    kwargs = {}
    hints = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in hints:
            raise ConfigError(f"unknown field {key!r} in {cls.__name__}")
        f = hints[key]
        nested = {"mix": MixPolicy, "loss": LossConfig, "backbone": BackboneConfig,
                  "isrnet": ISRNetConfig, "train": TrainLoopConfig,
                  "eval_options": EvalOptions, "stft": StftConfig, "tcn": TcnConfig}
        if key in nested and isinstance(value, dict):
            value = _build(nested[key], value)
        elif key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e


def _apply_data_root(cfg: ExperimentConfig) -> ExperimentConfig:
    root = os.environ.get(DATA_ROOT_ENV)
    if not root:
        return cfg
    updates = {}
    for name in ("manifest", "medleyvox_metadata"):
        value = getattr(cfg, name)
        if value and not os.path.isabs(value):
            updates[name] = os.path.join(root, value)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load an experiment config JSON; CLI overrides win over file values."""
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load config {path}: {e}") from e
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:  # e.g. "isrnet.freq_boundary_hz"
            section, leaf = key.split(".", 1)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"cannot override inside non-object {section!r}")
            data[section][leaf] = value
        else:
            data[key] = value
    return _apply_data_root(_build(ExperimentConfig, data))


def resolved_dict(cfg) -> dict:
    """Config with every default materialized, for run provenance."""
    def _conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: _conv(getattr(obj, f.name))
                    for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [_conv(v) for v in obj]
        return obj

    return _conv(cfg)


def echo_config(cfg, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(resolved_dict(cfg), f, indent=2)
    return path
