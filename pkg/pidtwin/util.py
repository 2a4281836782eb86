"""Shared helpers: slugify, nested dict access, deep merge, atomic writes, digests."""

from __future__ import annotations

import hashlib
import json
import re
import sys
import unicodedata
from pathlib import Path
from typing import Any


def slugify(name: str) -> str:
    """ASCII slug: 'Heizkreis Süd.png' -> 'heizkreis-sud-png'."""
    s = unicodedata.normalize("NFKD", name)
    s = "".join(ch for ch in s if not unicodedata.combining(ch))
    s = s.lower()
    s = re.sub(r"[^a-z0-9]+", "-", s).strip("-")
    return re.sub(r"-{2,}", "-", s)


def class_key(name: str) -> str:
    """Case/separator-insensitive key: 'Heat exchanger', 'heat_exchanger' -> 'heatexchanger'."""
    return slugify(name).replace("-", "")


def dget(dct: Any, path: str, default: Any = None) -> Any:
    """Nested dict access: dget(cfg, 'hough.votes', 30)."""
    cur = dct
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def deep_merge(dst: dict, src: dict) -> dict:
    """Recursive merge of src into dst (src wins). Mutates and returns dst."""
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            deep_merge(dst[k], v)
        else:
            dst[k] = v
    return dst


def deep_copy(obj: Any) -> Any:
    """Deep copy of a JSON-compatible structure."""
    return json.loads(json.dumps(obj))


def json_digest(obj: Any, length: int = 12) -> str:
    raw = json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:length]


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp"
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(path)


def dumps_json(obj: Any, compact: bool = False) -> str:
    if compact:
        return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def write_json_atomic(path: Path, obj: Any, compact: bool = False) -> None:
    write_text_atomic(path, dumps_json(obj, compact=compact))


def enable_utf8_stdio() -> None:
    """Best-effort UTF-8 console output for Windows and legacy terminals."""
    for stream_name in ("stdout", "stderr"):
        stream = getattr(sys, stream_name, None)
        reconfigure = getattr(stream, "reconfigure", None)
        if callable(reconfigure):
            try:
                reconfigure(encoding="utf-8", errors="replace")
            except Exception:
                pass
