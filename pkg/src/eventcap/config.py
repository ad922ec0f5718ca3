"""Flat ``key = value`` config files with typed parsing against dataclasses.

Lines are ``name = value``; ``#`` starts a comment; blank lines ignored.
Field types drive coercion: int, float, bool, str, and comma-separated
tuples of those.
"""

from __future__ import annotations

import dataclasses
import typing

from eventcap import ValidationError

__all__ = ["parse_kv_text", "coerce_config", "load_config", "dump_config"]

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_kv_text(text, where="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValidationError(f"{where}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce_value(text, ftype, key, where):
    origin = typing.get_origin(ftype)
    if origin is tuple:
        (item_type, *rest) = typing.get_args(ftype)
        if rest and rest != [Ellipsis] and rest != (Ellipsis,):
            raise ValidationError(f"{where}: unsupported tuple type for {key!r}")
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_coerce_value(t, item_type, key, where) for t in items)
    if ftype is bool:
        try:
            return _BOOL[text.lower()]
        except KeyError:
            raise ValidationError(f"{where}: {key!r} expects a boolean, got {text!r}") from None
    if ftype in (int, float):
        try:
            return ftype(text)
        except ValueError:
            raise ValidationError(f"{where}: {key!r} expects {ftype.__name__}, got {text!r}") from None
    if ftype is str:
        return text
    raise ValidationError(f"{where}: unsupported config field type for {key!r}: {ftype}")


def coerce_config(cls, kv, where="<config>"):
    """Build dataclass ``cls`` from string key-values; unknown keys rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(kv) - names
    if unknown:
        raise ValidationError(f"{where}: unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce_value(v, hints[k], k, where) for k, v in kv.items()}
    return cls(**kwargs)


def load_config(path, cls):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return coerce_config(cls, parse_kv_text(text, where=str(path)), where=str(path))


def dump_config(obj):
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
