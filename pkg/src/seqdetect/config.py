"""Plain-text ``key = value`` documents for training and experiment specs."""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from pathlib import Path

_SECTION = "settings"


def read_kv(path) -> dict[str, str]:
    """Parse a sectionless ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise OSError(f"{path}: cannot read config ({e.strerror or e})") from e
    return parse_kv(text, source=str(path))


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as e:
        raise ValueError(f"{source}: {e}") from e
    return dict(cp[_SECTION])


def _convert(raw: str, tp, name: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.strip().lower() in ("", "none"):
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(raw, inner[0], name)
    if origin in (tuple, list):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_convert(p, args[0], name) for p in parts)
    if tp is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return tp(raw.strip())
    except (TypeError, ValueError) as e:
        raise ValueError(f"{name}: cannot read {raw!r} as {tp.__name__}") from e


def dataclass_from_kv(cls, values: dict[str, str], base=None):
    """Build ``cls`` from string values, starting from ``base`` if given."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: _convert(v, hints[k], k) for k, v in values.items()}
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def dataclass_to_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (tuple, list)):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
