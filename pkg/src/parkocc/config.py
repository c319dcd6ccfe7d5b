"""Parser for the plain ``key = value`` configuration files."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ParseError


def parse_kv(text: str, path="<config>") -> dict[str, str]:
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError(path, line_no, "expected 'key = value'")
        out[key.replace("-", "_")] = value
    return out


def load_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), path)


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def config_hash(values: dict) -> str:
    return hashlib.sha256(format_kv(dict(sorted(values.items()))).encode()).hexdigest()


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def parse_tuple(value: str, cast=float) -> tuple:
    parts = [p for p in value.replace(",", " ").split() if p]
    return tuple(cast(p) for p in parts)
