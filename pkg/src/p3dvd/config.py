"""Flat ``key = value`` configuration files.

Values parse as JSON when possible (numbers, lists, booleans), otherwise
as bare strings.  ``#`` starts a comment.
"""

from __future__ import annotations

import json
from typing import Any, Dict


class ConfigError(ValueError):
    pass


def parse_config(text: str, path="<config>") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{no}: empty key")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def load_config(path) -> Dict[str, Any]:
    with open(path) as fh:
        return parse_config(fh.read(), path)


def pick(cfg: Dict[str, Any], key: str, default):
    """Config value for ``key`` coerced to the type of ``default``."""
    if key not in cfg:
        return default
    v = cfg[key]
    if isinstance(default, tuple):
        return tuple(type(d)(x) for d, x in zip(default, v)) if len(v) == len(default) else tuple(v)
    if isinstance(default, bool):
        return bool(v)
    if isinstance(default, (int, float)):
        return type(default)(v)
    return v
