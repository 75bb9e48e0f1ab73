"""Pipeline configuration: one JSON document with a ``version`` field.

Every section is optional; omitted keys take the dataclass defaults. Unknown
keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .pgo import LmConfig
from .sim import ScenarioConfig
from .vonet import ModelConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ImuSettings:
    gravity_compensation: bool = False
    gnss_drift_rate: float = 0.1  # m/s growth of trajectory sigma between fixes


@dataclass(frozen=True)
class PgoSettings:
    lam: float = 1.0
    information_scale: float = 1.0


@dataclass(frozen=True)
class EvalSettings:
    max_dt: float = 0.02
    rpe_delta: int = 1
    segment_lengths: tuple = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass(frozen=True)
class PipelineConfig:
    sim: ScenarioConfig = field(default_factory=ScenarioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    model_seed: int = 0
    imu: ImuSettings = field(default_factory=ImuSettings)
    pgo: PgoSettings = field(default_factory=PgoSettings)
    lm: LmConfig = field(default_factory=LmConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def scenario(self) -> ScenarioConfig:
        return dataclasses.replace(self.sim, gravity_compensation=self.imu.gravity_compensation)


_SECTIONS = {
    "sim": ScenarioConfig,
    "model": ModelConfig,
    "imu": ImuSettings,
    "pgo": PgoSettings,
    "lm": LmConfig,
    "eval": EvalSettings,
}
# Owned by the imu section so generator and integrator always agree.
_EXCLUDED = {"sim": {"gravity_compensation"}}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - _EXCLUDED.get(where, set())
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {data.get('version')!r}")
    unknown = sorted(set(data) - set(_SECTIONS) - {"version", "model_seed"})
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    kwargs = {name: _build(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "model_seed" in data:
        kwargs["model_seed"] = int(data["model_seed"])
    return PipelineConfig(**kwargs)


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = {"version": CONFIG_VERSION, "model_seed": cfg.model_seed}
    for name in _SECTIONS:
        d = dataclasses.asdict(getattr(cfg, name))
        for k in _EXCLUDED.get(name, ()):
            d.pop(k)
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    return out


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def default_config_json() -> str:
    return json.dumps(config_to_dict(PipelineConfig()), indent=2) + "\n"
