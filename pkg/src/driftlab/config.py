"""Structured experiment configuration.

YAML (or JSON) files with four sections: simulator, model, training,
output. Unknown keys are rejected so typos fail fast. Any key can be
overridden from the environment with ``DRIFTLAB_<SECTION>_<KEY>``, e.g.
``DRIFTLAB_TRAINING_EPOCHS=10``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

ENV_PREFIX = "DRIFTLAB_"


class ConfigError(Exception):
    pass


@dataclass
class SimulatorConfig:
    households: int = 3
    days: int = 25
    train_days: int = 20
    test_days: int = 5
    sample_interval: int = 10
    seed: int = 42


@dataclass
class ModelSection:
    embed_dim: int = 16
    rounds: int = 2
    hidden_dim: int = 32
    move_threshold: float = 0.5
    horizon: int = 10


@dataclass
class TrainingSection:
    epochs: int = 50
    batch_size: int = 1
    lr: float = 0.001
    lam: float = 200.0
    beta: float = 10.0
    strategy: str = "streak"
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)


_SECTIONS = {
    "simulator": SimulatorConfig,
    "model": ModelSection,
    "training": TrainingSection,
    "output": OutputSection,
}


def _coerce(section: str, key: str, value, annotation) -> object:
    origin = getattr(annotation, "__origin__", None)
    try:
        if annotation is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if annotation is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if annotation is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if origin is list:
            if not isinstance(value, list):
                raise TypeError
            inner = annotation.__args__[0]
            return [_coerce(section, key, v, inner) for v in value]
    except TypeError:
        raise ConfigError(
            f"{section}.{key}: expected {annotation}, got {value!r}") from None
    raise ConfigError(f"{section}.{key}: unsupported config type {annotation}")


def _build_section(name: str, data: dict) -> object:
    cls = _SECTIONS[name]
    known = {f.name: f.type for f in fields(cls)}
    annotations = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    # resolve the string annotations produced by deferred evaluation
    resolved = {"int": int, "float": float, "str": str,
                "list[int]": list[int], "list[str]": list[str]}
    kwargs = {}
    for key, value in data.items():
        ann = annotations[key].type
        if isinstance(ann, str):
            ann = resolved[ann]
        kwargs[key] = _coerce(name, key, value, ann)
    return cls(**kwargs)


def _apply_env_overrides(raw: dict, environ=None) -> dict:
    env = os.environ if environ is None else environ
    for var, text in sorted(env.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):]
        section, _, key = rest.partition("_")
        section = section.lower()
        key = key.lower()
        if section not in _SECTIONS or not key:
            raise ConfigError(f"unrecognized override variable {var}")
        value = yaml.safe_load(text)
        raw.setdefault(section, {})[key] = value
    return raw


def load_config(path: str | Path | None = None,
                environ=None) -> ExperimentConfig:
    """Load a config file (YAML/JSON), apply env overrides, validate."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded)}")
        raw = loaded
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    raw = _apply_env_overrides(raw, environ)

    cfg = ExperimentConfig(**{
        name: _build_section(name, raw.get(name, {})) for name in _SECTIONS})
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    sim = cfg.simulator
    if sim.households < 1 or sim.days < 1:
        raise ConfigError("simulator needs at least one household and one day")
    if sim.train_days + sim.test_days > sim.days:
        raise ConfigError("train_days + test_days exceeds simulated days")
    if sim.sample_interval < 1 or 1440 % sim.sample_interval != 0:
        raise ConfigError("sample_interval must divide 1440")
    tr = cfg.training
    if tr.epochs < 1:
        raise ConfigError("training.epochs must be at least 1")
    if tr.batch_size != 1:
        raise ConfigError("training.batch_size must be 1 (online learning)")
    if tr.strategy not in ("streak", "finetuned", "joint"):
        raise ConfigError(f"unknown strategy {tr.strategy!r}")
    if not tr.seeds:
        raise ConfigError("training.seeds must not be empty")
    if tr.lam < 0 or tr.beta <= 0:
        raise ConfigError("training.lam must be >= 0 and training.beta > 0")
    if cfg.model.horizon % cfg.simulator.sample_interval != 0:
        raise ConfigError("model.horizon must be a multiple of sample_interval")
    for fmt in cfg.output.formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}")
