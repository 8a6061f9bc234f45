"""Plain ``key = value`` text files (configs, truth files, manifests)."""
from __future__ import annotations

from pathlib import Path


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def format_kv(items) -> str:
    pairs = items.items() if hasattr(items, "items") else items
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def write_kv(path, items):
    Path(path).write_text(format_kv(items), encoding="utf-8")
