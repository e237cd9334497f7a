"""Experiment configuration: a versioned JSON schema with documented
defaults, strict unknown-key rejection, and a fixed override order of
file values, then command-line flags, then ``IASLAB_*`` environment
variables (environment wins).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .fgka import FgkaParams
from .predictor import LMOptions
from .scheduler import SchedulerParams
from .sim import WorkloadSpec, WorldSpec, random_world

SCHEMA_VERSION = 1
ENV_PREFIX = "IASLAB_"


@dataclass
class WorldConfig:
    """How to build the simulated world. ``interference_scale`` of None is
    calibrated so co-location multipliers land in
    ``[1, target_max_multiplier]``; a ``seed`` of None reuses the
    experiment seed."""

    hosts: int = 2
    vms_per_host: int = 2
    interference_scale: Optional[float] = None
    target_max_multiplier: float = 3.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.hosts < 1:
            raise ValueError("world.hosts must be >= 1")
        if self.vms_per_host != 2:
            raise ValueError("world.vms_per_host must be 2 (pairwise model)")
        if not self.target_max_multiplier > 1:
            raise ValueError("world.target_max_multiplier must be > 1")


_SECTION_TYPES = {
    "world": WorldConfig,
    "workload": WorkloadSpec,
    "fgka": FgkaParams,
    "lm": LMOptions,
    "scheduler": SchedulerParams,
}

# Per-sample weights are an API-only knob, not a config file field.
_EXCLUDED_FIELDS = {"lm": ("weights",)}

_SECTION_FIELDS = {
    name: tuple(
        f.name for f in fields(t) if f.name not in _EXCLUDED_FIELDS.get(name, ())
    )
    for name, t in _SECTION_TYPES.items()
}

_TOP_LEVEL_DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "trials": 30,
    "profile_apps": 24,
    "profile_backgrounds": 24,
    "profile_queues": 400,
}


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    fgka: FgkaParams = field(default_factory=FgkaParams)
    lm: LMOptions = field(default_factory=LMOptions)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    seed: int = 0
    output_dir: str = "out"
    trials: int = 30
    profile_apps: int = 24
    profile_backgrounds: int = 24
    profile_queues: int = 400

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for name in _TOP_LEVEL_DEFAULTS:
            out[name] = getattr(self, name)
        for name in _SECTION_TYPES:
            section = asdict(getattr(self, name))
            for excluded in _EXCLUDED_FIELDS.get(name, ()):
                section.pop(excluded, None)
            out[name] = _jsonable(section)
        return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def _build_section(name: str, values: dict):
    cls = _SECTION_TYPES[name]
    known = _SECTION_FIELDS[name]
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key!r} (known: {', '.join(known)})")
    kwargs = {k: _tupled(v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _env_overrides(env) -> dict:
    """Translate IASLAB_* variables into a nested override dict.

    ``IASLAB_SEED=7`` sets the experiment seed; ``IASLAB_WORKLOAD_TASK_COUNT``
    sets workload.task_count, and so on for every section field.
    """
    out: dict = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        value = _parse_env_value(env[key])
        if name in _TOP_LEVEL_DEFAULTS:
            out[name] = value
            continue
        for section, section_fields in _SECTION_FIELDS.items():
            prefix = section + "_"
            if name.startswith(prefix) and name[len(prefix):] in section_fields:
                out.setdefault(section, {})[name[len(prefix):]] = value
                break
        else:
            raise ConfigError(f"unknown environment variable {key}")
    return out


def load_config(path=None, flag_overrides: Optional[dict] = None, env=None) -> ExperimentConfig:
    """Resolve the effective configuration.

    Precedence, lowest to highest: built-in defaults, the JSON file,
    command-line flags, then ``IASLAB_*`` environment variables. Unknown
    keys anywhere are rejected.
    """
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema version {version!r}")

    merged: dict = {name: dict() for name in _SECTION_TYPES}
    merged.update({k: v for k, v in _TOP_LEVEL_DEFAULTS.items()})

    def apply(source: dict, origin: str):
        for key, value in source.items():
            if key in _SECTION_TYPES:
                if not isinstance(value, dict):
                    raise ConfigError(f"{origin}: section {key!r} must be an object")
                merged[key].update(value)
            elif key in _TOP_LEVEL_DEFAULTS:
                merged[key] = value
            else:
                raise ConfigError(f"{origin}: unknown key {key!r}")

    apply(raw, f"config file {path}" if path else "config")
    if flag_overrides:
        apply(flag_overrides, "command line")
    if env is not None:
        apply(_env_overrides(env), "environment")

    sections = {name: _build_section(name, merged[name]) for name in _SECTION_TYPES}
    top = {k: merged[k] for k in _TOP_LEVEL_DEFAULTS}
    for name in ("seed", "trials", "profile_apps", "profile_backgrounds", "profile_queues"):
        v = top[name]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
    if not isinstance(top["output_dir"], str) or not top["output_dir"]:
        raise ConfigError("output_dir must be a non-empty string")
    return ExperimentConfig(**sections, **top)


def make_world(config: ExperimentConfig) -> WorldSpec:
    """Build the world described by the configuration."""
    seed = config.world.seed if config.world.seed is not None else config.seed
    return random_world(
        hosts=config.world.hosts,
        seed=seed,
        target_max_multiplier=config.world.target_max_multiplier,
        interference_scale=config.world.interference_scale,
        workload_spec=config.workload,
        sched_params=config.scheduler,
    )
