"""Runtime configuration: defaults < ranger.toml < RANGER_* environment < flags."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields
from typing import Mapping, Optional

from .errors import SchemaError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "RANGER_"
DEFAULT_CONFIG_FILE = "ranger.toml"


@dataclass
class Config:
    index: Optional[str] = None
    poms: Optional[str] = None
    vulns: Optional[str] = None
    snapshot: Optional[str] = None
    max_depth: int = 10
    halflife_mode: str = "absolute"
    min_affected: int = 0
    open_upper: bool = False
    validate_cmd: Optional[str] = None
    timeout: float = 300.0
    parallelism: int = 1

    def validate(self) -> "Config":
        if self.max_depth < 1:
            raise SchemaError("max_depth must be at least 1")
        if self.halflife_mode not in ("absolute", "relative"):
            raise SchemaError(f"halflife_mode must be absolute or relative, got {self.halflife_mode!r}")
        if self.parallelism < 1:
            raise SchemaError("parallelism must be at least 1")
        return self


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    try:
        if "bool" in kind:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except ValueError:
        raise SchemaError(f"bad value for {key}: {value!r}") from None
    return value


def read_config_file(path) -> dict:
    """Read ranger.toml; keys may sit at top level or under ``[ranger]``."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    table = dict(data.get("ranger", {}))
    table.update({k: v for k, v in data.items() if k != "ranger"})
    out = {}
    for key, value in table.items():
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise SchemaError(f"{path}: unknown key {key!r}")
        out[key] = _check(key, value) if not isinstance(value, str) else _coerce(key, value)
    return out


def _check(key: str, value):
    kind = _TYPES[key]
    ok = (
        ("bool" in kind and isinstance(value, bool))
        or ("int" in kind and isinstance(value, int) and not isinstance(value, bool))
        or ("float" in kind and isinstance(value, (int, float)) and not isinstance(value, bool))
    )
    if not ok:
        raise SchemaError(f"bad value for {key}: {value!r}")
    return float(value) if "float" in kind else value


def load_config(
    flags: Optional[Mapping] = None,
    environ: Optional[Mapping[str, str]] = None,
    config_path: Optional[str] = None,
) -> Config:
    """Merge the layers; ``None`` flag values mean "not given"."""
    environ = os.environ if environ is None else environ
    values: dict = {}
    path = config_path or environ.get(ENV_PREFIX + "CONFIG")
    if path is None and os.path.exists(DEFAULT_CONFIG_FILE):
        path = DEFAULT_CONFIG_FILE
    if path is not None:
        values.update(read_config_file(path))
    for key in _TYPES:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = _coerce(key, env)
    for key, value in (flags or {}).items():
        if key in _TYPES and value is not None:
            values[key] = value
    return Config(**values).validate()
