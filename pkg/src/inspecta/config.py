"""Run configuration: TOML file plus CLI-flag overrides.

Precedence is flags > file > built-in defaults. Credentials are environment
only (INSPECTA_API_KEY and friends) and deliberately have no config keys, so
a committed config file can never carry a secret.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .corpus import DEFAULT_QUESTION
from .rewards import (
    DEFAULT_CLIP_EPSILON,
    DEFAULT_GROUP_SIZE,
    DEFAULT_KL_WEIGHT,
    DEFAULT_WEIGHTS,
    RewardWeights,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    endpoint_url: str | None = None
    endpoint_model: str | None = None
    loc_weight: float = DEFAULT_WEIGHTS.loc_weight
    type_weight: float = DEFAULT_WEIGHTS.type_weight
    tool_weight: float = DEFAULT_WEIGHTS.tool_weight
    tool_bonus: float = DEFAULT_WEIGHTS.tool_bonus
    call_cost: float = DEFAULT_WEIGHTS.call_cost
    format_penalty: float = DEFAULT_WEIGHTS.format_penalty
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    kl_weight: float = DEFAULT_KL_WEIGHT
    group_size: int = DEFAULT_GROUP_SIZE
    clahe_clip: float = 2.0
    clahe_tiles: tuple = (8, 8)
    canny_low: float = 50.0
    canny_high: float = 150.0
    median_kernel: int = 31
    jobs: int = 1
    seed: int = 0
    temperature: float = 0.0
    max_tokens: int = 1024
    compute_margins: bool = False
    question: str = DEFAULT_QUESTION
    priors_path: str | None = None

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(
            loc_weight=self.loc_weight,
            type_weight=self.type_weight,
            tool_weight=self.tool_weight,
            tool_bonus=self.tool_bonus,
            call_cost=self.call_cost,
            format_penalty=self.format_penalty,
        )

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply non-None CLI flag values on top of this config."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        for key in changes:
            if key not in _FIELD_NAMES:
                raise ConfigError(f"unknown config field {key!r}")
        if "clahe_tiles" in changes:
            changes["clahe_tiles"] = _as_tiles(changes["clahe_tiles"])
        return dataclasses.replace(self, **changes)


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}

# TOML section/key -> RunConfig field
_SCHEMA = {
    "endpoint": {"url": "endpoint_url", "model": "endpoint_model"},
    "reward": {
        "loc_weight": "loc_weight",
        "type_weight": "type_weight",
        "tool_weight": "tool_weight",
        "tool_bonus": "tool_bonus",
        "call_cost": "call_cost",
        "format_penalty": "format_penalty",
        "clip_epsilon": "clip_epsilon",
        "kl_weight": "kl_weight",
        "group_size": "group_size",
    },
    "tools": {
        "clahe_clip": "clahe_clip",
        "clahe_tiles": "clahe_tiles",
        "canny_low": "canny_low",
        "canny_high": "canny_high",
        "median_kernel": "median_kernel",
    },
    "run": {
        "jobs": "jobs",
        "seed": "seed",
        "temperature": "temperature",
        "max_tokens": "max_tokens",
        "compute_margins": "compute_margins",
        "question": "question",
    },
    "priors": {"path": "priors_path"},
}


def _as_tiles(value) -> tuple:
    if isinstance(value, str):
        parts = value.replace("x", ",").split(",")
        try:
            value = [int(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"clahe_tiles must be two integers, got {value!r}") from exc
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"clahe_tiles must be two integers, got {value!r}")
    nx, ny = value
    if not (isinstance(nx, int) and isinstance(ny, int)):
        raise ConfigError(f"clahe_tiles must be two integers, got {value!r}")
    return (nx, ny)


def load_config(path=None) -> RunConfig:
    """Read a TOML config file; no path means built-in defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    values = {}
    for section, entries in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(entries, dict):
            raise ConfigError(f"config section [{section}] must be a table")
        for key, value in entries.items():
            field = _SCHEMA[section].get(key)
            if field is None:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            if field == "clahe_tiles":
                value = _as_tiles(value)
            values[field] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
