"""Run configuration: one JSON file covering every tunable in the pipeline.

Precedence is CLI flag > config file > built-in default. Unknown keys are
rejected everywhere so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .confidence import GatingConfig
from .egomotion import EgoConfig
from .ekf import EkfConfig
from .errors import ConfigError
from .metrics import MetricConfig
from .protocols import ScheduleConfig
from .trackers import NccConfig

_SECTIONS = {
    "gating": GatingConfig,
    "ego": EgoConfig,
    "ekf": EkfConfig,
    "schedule": ScheduleConfig,
    "metrics": MetricConfig,
    "ncc": NccConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    gating: GatingConfig = field(default_factory=GatingConfig)
    ego: EgoConfig = field(default_factory=EgoConfig)
    ekf: EkfConfig = field(default_factory=EkfConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    ncc: NccConfig = field(default_factory=NccConfig)


def _build_section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {}
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, data[name], name)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    out: dict = {"seed": cfg.seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()}
    return out


def describe_config() -> str:
    """Every config key with its default, for --help output."""
    lines = ["config keys (JSON, nested by section; CLI flags override):", "  seed = 0"]
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            lines.append(f"  {name}.{f.name} = {default!r}")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Replace whole sections or the seed (used by CLI flag overrides)."""
    return dataclasses.replace(cfg, **sections)
