"""Flat key-value configuration files with section headers.

Config dataclasses declare each field's section through
``field(metadata={"section": ...})``; the file format is plain INI.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from pathlib import Path

from dvevio.errors import IngestionError


def section(name, default, **kw):
    if isinstance(default, (list, dict, set)):
        raise TypeError("use tuples for sequence defaults")
    return dataclasses.field(default=default, metadata={"section": name}, **kw)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(text, default, where):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            proto = default[0] if default else 0.0
            return tuple(_coerce(p, proto, where) for p in text.split(","))
        return text
    except ValueError:
        raise IngestionError(f"{where}: cannot parse {text!r}") from None


def to_ini(obj) -> str:
    cp = configparser.ConfigParser()
    for f in dataclasses.fields(obj):
        sec = f.metadata.get("section", "general")
        if sec not in cp:
            cp[sec] = {}
        cp[sec][f.name] = _format(getattr(obj, f.name))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def from_ini(cls, source, base=None):
    """Build ``cls`` from an INI path or text, overriding ``base`` (or defaults)."""
    cp = configparser.ConfigParser()
    where = "config"
    try:
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "[" not in source):
            path = Path(source)
            if not path.is_file():
                raise IngestionError(f"missing config file {path}")
            where = str(path)
            cp.read(path)
        else:
            cp.read_string(source)
    except configparser.Error as exc:
        raise IngestionError(f"{where}: {exc}") from exc
    obj = base if base is not None else cls()
    by_key = {(f.metadata.get("section", "general"), f.name): f for f in dataclasses.fields(cls)}
    updates = {}
    for sec in cp.sections():
        for key, text in cp[sec].items():
            f = by_key.get((sec, key))
            if f is None:
                raise IngestionError(f"{where}: unknown key [{sec}] {key}")
            updates[key] = _coerce(text, getattr(obj, key), f"{where} [{sec}] {key}")
    return dataclasses.replace(obj, **updates)


def write_config(path, obj):
    Path(path).write_text(to_ini(obj))
