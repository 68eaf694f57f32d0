"""Config machinery: dataclass <-> YAML, dotted overrides, stable hashing.

Configs are plain nested dataclasses.  Loading is strict — unknown keys and
uncoercible types are errors that name the offending dotted path — so typos
in experiment files fail fast instead of silently training the wrong thing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from typing import Any, Sequence, Type, TypeVar

import yaml

T = TypeVar("T")


def to_dict(obj: Any) -> Any:
    """Dataclass tree -> plain dict/list/scalar tree (tuples become lists)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def _coerce(value: Any, ftype: Any, path: str) -> Any:
    origin = typing.get_origin(ftype)
    args = typing.get_args(ftype)

    # Optional[X] / unions
    if origin is typing.Union:
        if value is None:
            if type(None) in args:
                return None
            raise ValueError(f"{path}: null not allowed")
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, path)
            except (TypeError, ValueError):
                continue
        raise ValueError(f"{path}: {value!r} fits none of {args}")

    if dataclasses.is_dataclass(ftype) and isinstance(ftype, type):
        return from_dict(ftype, value, path)

    if origin in (tuple, list) or ftype in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{path}: expected a sequence, got {type(value).__name__}")
        out = []
        for i, v in enumerate(value):
            if origin is tuple and args and args[-1] is not Ellipsis and len(args) == len(value):
                elem_t = args[i]
            elif args:
                elem_t = args[0]
            else:
                elem_t = None
            out.append(_coerce(v, elem_t, f"{path}[{i}]") if elem_t else v)
        return tuple(out) if (origin is tuple or ftype is tuple) else out

    if origin is dict or ftype is dict:
        if not isinstance(value, dict):
            raise ValueError(f"{path}: expected a mapping, got {type(value).__name__}")
        return dict(value)

    if ftype is bool:
        if isinstance(value, bool):
            return value
        raise ValueError(f"{path}: expected a bool, got {value!r}")
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{path}: expected an int, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{path}: expected an int, got non-integral {value!r}")
        return int(value)
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ValueError(f"{path}: expected a string, got {value!r}")
        return value
    return value  # Any / untyped


def from_dict(cls: Type[T], data: Any, path: str = "") -> T:
    """Build dataclass `cls` from a plain dict tree; reject unknown keys."""
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    if not isinstance(data, dict):
        raise ValueError(f"{path or cls.__name__}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        loc = path or cls.__name__
        raise ValueError(f"{loc}: unknown keys {unknown}; valid keys: {sorted(fields)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(value, hints.get(name, Any), sub)
    return cls(**kwargs)


def load_yaml(cls: Type[T], path: str) -> T:
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    return from_dict(cls, data)


def dump_yaml(obj: Any, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(obj), f, sort_keys=True)


def apply_overrides(obj: T, overrides: Sequence[str]) -> T:
    """Apply 'dotted.path=value' overrides; values parse as YAML scalars."""
    data = to_dict(obj)
    for spec in overrides:
        if "=" not in spec:
            raise ValueError(f"override {spec!r} must look like key.path=value")
        key, _, raw = spec.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"override {spec!r} has an empty key")
        node = data
        parts = key.split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ValueError(f"override {spec!r}: no such config path {'.'.join(parts[: i + 1])!r}")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ValueError(f"override {spec!r}: no such config path {key!r}")
        node[leaf] = yaml.safe_load(raw)
    return from_dict(type(obj), data)


def config_hash(obj: Any) -> str:
    """Stable content hash of a config; key order never matters."""
    blob = json.dumps(to_dict(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
