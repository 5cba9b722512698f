"""Layered run configuration: flags > environment > config file > defaults.

The resolved mapping is computed once before a command runs and echoed into
sidecar logs so every artifact records how it was produced.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

ENV_VARS = {
    "HIERTREE_API_URL": "api_url",
    "HIERTREE_API_KEY": "api_key",
    "HIERTREE_CACHE_DIR": "cache_dir",
}


@dataclass
class RunConfig:
    # fusion
    momentum: float = 0.9
    tolerance: float = 0.0
    max_depth_used: int | None = None
    # tree build
    group_ratio: float = 0.05
    leaf_threshold: int = 2
    direct_threshold: int = 10
    max_depth: int = 6
    line_level_rows: bool = False
    # providers
    api_url: str | None = None
    api_key: str | None = None
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 512
    cache_dir: str | None = None
    # misc
    seed: int = 0
    jobs: int = 4

    def to_dict(self) -> dict:
        out = asdict(self)
        if out.get("api_key"):
            out["api_key"] = "***"  # never echo secrets into logs
        return out


_FIELD_NAMES = {f.name: f for f in fields(RunConfig)}

# Config files and CLI flags use the established hyperparameter spellings.
ALIASES = {"lambda": "momentum", "tau": "tolerance"}


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            try:
                import tomli as tomllib
            except ModuleNotFoundError as exc:
                raise ConfigError("TOML config requires Python 3.11+ or the tomli package") from exc
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:
            raise ConfigError(f"bad TOML in {path}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from exc


def resolve_config(
    config_path: str | None = None,
    env: dict[str, str] | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Merge defaults, config file, environment, and explicit overrides."""
    env = os.environ if env is None else env
    merged: dict = {}

    if config_path:
        for key, value in _load_config_file(config_path).items():
            key = ALIASES.get(key, key)
            if key not in _FIELD_NAMES:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            merged[key] = value

    for var, key in ENV_VARS.items():
        if env.get(var):
            merged[key] = env[var]

    for key, value in (overrides or {}).items():
        key = ALIASES.get(key, key)
        if key not in _FIELD_NAMES:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            merged[key] = value

    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
