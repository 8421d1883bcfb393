"""
Configuration module for the lowres-tts toolkit.
Loads key = value config files and layers them over built-in defaults.
"""

import os
import logging
import dataclasses

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from lowres_tts.errors import TTSError

logger = logging.getLogger(__name__)

KNOWN_SECTIONS = (
    "features",
    "vad",
    "prep",
    "model",
    "train",
    "anneal",
    "adam",
    "transfer",
    "flow",
    "pipeline",
)

THREADS_ENV_VAR = "LOWRES_TTS_THREADS"


def load_config_file(path):
    """Parse a config file into ``{section: {key: value}}``.

    Both ``[train]`` headers and dotted keys (``train.epochs = 10``) are accepted.
    """
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e

    config = {}
    for section, values in data.items():
        if section not in KNOWN_SECTIONS:
            raise ConfigError(f"unknown config section '{section}' in {path}")
        if not isinstance(values, dict):
            raise ConfigError(f"'{section}' must be a section, not a value")
        config[section] = dict(values)
    return config


def _coerce(name, current, value):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} expects a string, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} expects a list, got {value!r}")
        return tuple(value)
    # Optional fields that default to None take the value as given
    return value


def apply_overrides(instance, overrides, section="config"):
    """Return a copy of a config dataclass with ``overrides`` applied.

    Keys that are not fields are rejected; values keep the type of the field's
    current value. The dataclass re-validates its invariants on construction.
    """
    if not overrides:
        return instance
    fields = {f.name for f in dataclasses.fields(instance)}
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in fields:
            raise ConfigError(f"unknown key '{section}.{key}'")
        changes[key] = _coerce(f"{section}.{key}", getattr(instance, key), value)
    return dataclasses.replace(instance, **changes)


def layered(default, file_config, section, cli_overrides=None):
    """Build a config: built-in default < config file section < CLI flags."""
    instance = apply_overrides(default, file_config.get(section, {}), section)
    return apply_overrides(instance, cli_overrides or {}, section)


def worker_count():
    """Number of worker threads allowed by ``LOWRES_TTS_THREADS`` (default: CPUs)."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from e
    if count < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {count}")
    return count


class ConfigError(TTSError):
    """Raised when a configuration value or file is invalid."""

    code = "E_CONFIG"
