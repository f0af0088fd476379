"""Experiment configuration (YAML) with field-path error reporting.

Every section has defaults, so an empty file is a valid configuration::

    seed: 0
    workers: 1
    scenes:   {kind: reappearance, count: 20, duration: 120}
    memory:   {delta: 5, gamma_iou: 0.95, n_long: 4, n_short: 6,
               modes: [divemem, greedy_recent]}
    prompt:   {type: clicks, clicks: 3}
    tracker:  {patch: 4, position_weight: 1.0, variance_weight: 1.0,
               vote_temperature: 0.002, confidence_temperature: 0.02, color_sigma: 0.1}
    metrics:  {boundary_tolerance: null, reacquire_window: 10, reacquire_j: 50.0}
    losses:   {lambda_arl: 20.0, lambda_tsl: 0.1, sigma: 1.0, kernel_size: 5,
               focal_gamma: 2.0, tau: 100.0, tau_mode: inverse}
    sampler:  {mode: mixed_1_1, frames_per_clip: 8, image_video_ratio: [1, 4]}
    output:   {figures: true}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional, get_args, get_origin, get_type_hints

import yaml

from ..errors import ConfigError
from ..losses import TAU_MODES
from ..memory import MODES
from .sampler import SAMPLER_MODES

SCENE_KINDS = ("reappearance", "static", "disappear")
PROMPT_TYPES = ("clicks", "box", "mask")


@dataclass
class ScenesSection:
    kind: str = "reappearance"
    count: int = 20
    duration: int = 120


@dataclass
class MemorySection:
    delta: int = 5
    gamma_iou: float = 0.95
    n_long: int = 4
    n_short: int = 6
    modes: list[str] = field(default_factory=lambda: ["divemem", "greedy_recent"])


@dataclass
class PromptSection:
    type: str = "clicks"
    clicks: int = 3


@dataclass
class TrackerSection:
    patch: int = 4
    position_weight: float = 1.0
    variance_weight: float = 1.0
    vote_temperature: float = 0.002
    confidence_temperature: float = 0.02
    color_sigma: float = 0.1


@dataclass
class MetricsSection:
    boundary_tolerance: Optional[float] = None
    reacquire_window: int = 10
    reacquire_j: float = 50.0


@dataclass
class LossesSection:
    lambda_arl: float = 20.0
    lambda_tsl: float = 0.1
    sigma: float = 1.0
    kernel_size: int = 5
    focal_gamma: float = 2.0
    tau: float = 100.0
    tau_mode: str = "inverse"


@dataclass
class SamplerSection:
    mode: str = "mixed_1_1"
    frames_per_clip: int = 8
    image_video_ratio: list[int] = field(default_factory=lambda: [1, 4])


@dataclass
class OutputSection:
    figures: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    scenes: ScenesSection = field(default_factory=ScenesSection)
    memory: MemorySection = field(default_factory=MemorySection)
    prompt: PromptSection = field(default_factory=PromptSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    losses: LossesSection = field(default_factory=LossesSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, tp, path: str):
    origin = get_origin(tp)
    if origin is not None and type(None) in get_args(tp):
        if value is None:
            return None
        tp = next(a for a in get_args(tp) if a is not type(None))
        origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        (item,) = get_args(tp)
        return [_coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{path}.{f.name}" if path else f.name)
    return cls(**kwargs)


def _choice(path: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(path, f"unknown value {value!r}; expected one of {list(allowed)}")


def _positive(path: str, value, allow_zero: bool = False) -> None:
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(path, f"must be {'non-negative' if allow_zero else 'positive'}, got {value}")


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    _positive("workers", cfg.workers)
    _choice("scenes.kind", cfg.scenes.kind, SCENE_KINDS)
    _positive("scenes.count", cfg.scenes.count)
    if cfg.scenes.duration < 20:
        raise ConfigError("scenes.duration", "must be at least 20 frames")
    _positive("memory.delta", cfg.memory.delta)
    if not 0.0 <= cfg.memory.gamma_iou <= 1.0:
        raise ConfigError("memory.gamma_iou", "must lie in [0, 1]")
    _positive("memory.n_long", cfg.memory.n_long)
    _positive("memory.n_short", cfg.memory.n_short)
    if not cfg.memory.modes:
        raise ConfigError("memory.modes", "at least one memory mode is required")
    for i, m in enumerate(cfg.memory.modes):
        _choice(f"memory.modes[{i}]", m, MODES)
    if len(set(cfg.memory.modes)) != len(cfg.memory.modes):
        raise ConfigError("memory.modes", "modes must be distinct")
    _choice("prompt.type", cfg.prompt.type, PROMPT_TYPES)
    _positive("prompt.clicks", cfg.prompt.clicks)
    _positive("tracker.patch", cfg.tracker.patch)
    for name in ("vote_temperature", "confidence_temperature", "color_sigma"):
        _positive(f"tracker.{name}", getattr(cfg.tracker, name))
    if cfg.metrics.boundary_tolerance is not None:
        _positive("metrics.boundary_tolerance", cfg.metrics.boundary_tolerance, allow_zero=True)
    _positive("metrics.reacquire_window", cfg.metrics.reacquire_window)
    _positive("losses.lambda_arl", cfg.losses.lambda_arl, allow_zero=True)
    _positive("losses.lambda_tsl", cfg.losses.lambda_tsl, allow_zero=True)
    _positive("losses.sigma", cfg.losses.sigma)
    if cfg.losses.kernel_size < 1 or cfg.losses.kernel_size % 2 == 0:
        raise ConfigError("losses.kernel_size", "must be a positive odd integer")
    _positive("losses.tau", cfg.losses.tau)
    _choice("losses.tau_mode", cfg.losses.tau_mode, TAU_MODES)
    _choice("sampler.mode", cfg.sampler.mode, SAMPLER_MODES)
    if len(cfg.sampler.image_video_ratio) != 2:
        raise ConfigError("sampler.image_video_ratio", "expected [images, videos]")
    return cfg


def config_from_dict(data: Optional[dict]) -> ExperimentConfig:
    return validate_config(_build(ExperimentConfig, data, ""))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)
