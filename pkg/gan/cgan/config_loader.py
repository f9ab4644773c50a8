"""
config_loader.py - Layered run configuration: defaults < config file < command-line flags.

Config files are either flat `key = value` text or YAML (flat, or nested under
a top-level `training:` section). Keys may be written snake_case or kebab-case.
"""
import logging
import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .errors import ContractError, UsageError
from .training import TrainConfig

logger = logging.getLogger(__name__)

ENV_OUT_DIR = 'PGAN_OUT_DIR'
YAML_SUFFIXES = ('.yaml', '.yml')
YAML_SECTION = 'training'

INT_KEYS = {'epochs', 'batch_size', 'z_dim', 'seed', 'workers', 'eval_samples_per_class'}
FLOAT_KEYS = {'lr', 'beta1', 'beta2', 'adam_eps', 'leaky_slope'}
LIST_KEYS = {'snapshot_epochs', 'g_widths', 'd_widths'}
STR_KEYS = {'data', 'out'}
ALIASES = {'batch': 'batch_size', 'master_seed': 'seed', 'out_dir': 'out', 'eps': 'adam_eps'}

CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))


def normalize_key(key: str) -> str:
    key = str(key).strip().replace('-', '_')
    return ALIASES.get(key, key)


def parse_key_value_text(text: str, source: str = '<text>') -> Dict[str, str]:
    """`key = value` lines; `#` comments and blank lines skipped, surrounding quotes stripped."""
    values = {}
    for line_number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise UsageError(f"{source}:{line_number}: expected 'key = value', got {line!r}")
        key, value = line.split('=', 1)
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
            value = value[1:-1]
        values[normalize_key(key)] = value
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text(encoding='utf-8')
    if path.suffix.lower() not in YAML_SUFFIXES:
        values = parse_key_value_text(text, str(path))
    else:
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise UsageError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: expected a mapping at top level")
        if YAML_SECTION in loaded:
            loaded = loaded[YAML_SECTION] or {}
        values = {normalize_key(k): v for k, v in loaded.items()}
    logger.info(f"Loaded config from {path}")
    return values


def load_default_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Like load_config_file, but a missing file falls back to defaults with a warning."""
    if not os.path.exists(path):
        logger.warning(f"Config file not found at {path}, using defaults")
        return {}
    return load_config_file(path)


def _int_list(key: str, value: Any) -> tuple:
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = [item for item in str(value).replace(' ', '').split(',') if item]
    try:
        return tuple(int(item) for item in items)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected a comma separated list of integers, got {value!r}")


def coerce_value(key: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if key in INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected a number, got {value!r}")
    if key in LIST_KEYS:
        return _int_list(key, value)
    if key in STR_KEYS:
        return str(value)
    raise UsageError(f"unknown config key '{key}' (known: {', '.join(CONFIG_KEYS)})")


def build_config(file_values: Optional[Dict[str, Any]] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Merge layers into a validated TrainConfig; flags given as None do not override."""
    merged: Dict[str, Any] = {}
    env_out = os.getenv(ENV_OUT_DIR)
    if env_out:
        merged['out'] = env_out
    for layer in (file_values or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        for key, value in layer.items():
            key = normalize_key(key)
            merged[key] = coerce_value(key, value)
    config = TrainConfig(**{k: v for k, v in merged.items() if v is not None})
    try:
        config.validate()
    except ContractError as e:
        raise UsageError(str(e)) from e
    return config


def config_from_echo(text: str) -> TrainConfig:
    """Rebuild the effective config written to config.echo or stored in a checkpoint."""
    values = parse_key_value_text(text, 'config.echo')
    merged = {key: coerce_value(key, value) for key, value in values.items()}
    config = TrainConfig(**merged)
    config.validate()
    return config
