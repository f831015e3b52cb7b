"""Run configuration: flat key = value files, env vars, and flag overrides.

Precedence (highest wins): command-line flags > environment variables
(prefix ``TKGE_``, e.g. TKGE_MAX_EPOCHS) > config file > built-in defaults.
Config files are plain text, one ``key = value`` per line, '#' comments;
unknown keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import ConfigError

ENV_PREFIX = "TKGE_"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    # model
    dim: int = 500
    variant: str = "full"
    c_min: float = 0.005
    c_max: float = 0.5
    # optimization
    lr: float = 3e-5
    batch_size: int = 512
    negatives: int = 10
    margin: float = 1.0
    adv_temp: float = 1.0
    max_epochs: int = 5000
    patience: int = 20
    eval_every: int = 25
    seed: int = 0
    reciprocal: bool = True
    threads: int = 1
    # dataset construction
    train_file: str = ""
    valid_file: str = ""
    test_file: str = ""
    file_format: str = "auto"      # auto | point | interval
    granularity: str = "day"       # day | year-binned
    n_bins: int = 0                # 0 = unset (day granularity)
    # artifact locations / command-specific
    bundle: str = ""
    out_dir: str = ""
    checkpoint: str = ""
    resume: str = ""
    split: str = "test"
    raw_setting: bool = False
    dump_ranks: str = ""


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def coerce(key: str, value: str):
    """Parse a raw string into the declared type of a RunConfig key."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = value.strip()
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_file(path) -> dict:
    """Read a key = value file, validating every key against the schema."""
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for line_no, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        values[key] = coerce(key, value)
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for key in _FIELD_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            values[key] = coerce(key, environ[env_key])
    return values


def resolve(file_path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Merge defaults, config file, environment, and flag overrides."""
    merged = {f.name: getattr(_DEFAULTS, f.name) for f in fields(RunConfig)}
    if file_path:
        merged.update(parse_config_file(file_path))
    merged.update(env_overrides(environ))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    cfg = RunConfig(**merged)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.variant not in ("full", "sn", "tn", "ts"):
        raise ConfigError(f"variant must be full/sn/tn/ts, got {cfg.variant!r}")
    if cfg.file_format not in ("auto", "point", "interval"):
        raise ConfigError("file_format must be auto, point, or interval")
    if cfg.granularity not in ("day", "year-binned"):
        raise ConfigError("granularity must be day or year-binned")
    if cfg.split not in ("train", "valid", "test"):
        raise ConfigError("split must be train, valid, or test")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if not 0 < cfg.c_min < cfg.c_max:
        raise ConfigError("covariance bounds must satisfy 0 < c_min < c_max")


def format_config(cfg: RunConfig) -> str:
    """Effective configuration as a reloadable key = value file."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
