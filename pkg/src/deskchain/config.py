"""Strict JSON configs: unknown keys are errors, missing keys take defaults."""

import dataclasses
import hashlib
import json
from typing import Any, Dict, Type, TypeVar

T = TypeVar("T")


class ConfigError(ValueError):
    pass


def from_dict(cls: Type[T], data: Dict[str, Any], where: str = "config") -> T:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}; allowed: {sorted(known)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def read_json(path) -> Any:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_config(path, cls: Type[T]) -> T:
    return from_dict(cls, read_json(path), str(path))


def digest(obj: Any) -> str:
    """sha256 over canonical JSON, used to identify a run's configuration."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()).hexdigest()
