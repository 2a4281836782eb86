"""Configuration: pipeline.yaml loading, environment overrides, validation, digest.

DEFAULT_CONFIG is the single source of truth for every tunable; pipeline.yaml
is deep-merged over it and PIDTWIN__SECTION__KEY variables are applied last.
"""

from __future__ import annotations

import logging
import os
import string
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .util import deep_copy, deep_merge, dget, json_digest

log = logging.getLogger("pidtwin.config")

ENV_PREFIX = "PIDTWIN__"

BRICK_NS = "https://brickschema.org/schema/Brick#"

DEFAULT_CLASS_MAP: dict[str, dict[str, str]] = {
    "Pump": {"brick": "Pump", "budo": "PU"},
    "Valve": {"brick": "Valve", "budo": "VL"},
    "HeatExchanger": {"brick": "Heat_Exchanger", "budo": "HX"},
    "Flap": {"brick": "Damper", "budo": "DA"},
}

DEFAULT_CONFIG: dict[str, Any] = {
    "classes": ["Pump", "Valve", "HeatExchanger", "Flap"],
    "tiling": {"tile_size": 800, "overlap": 100},
    "detector": {
        "mode": "annotations",
        "threshold": 0.8,
        "nms_iou": 0.5,
        "templates_dir": "builtin",
        "scales": [0.75, 1.0, 1.25],
        "rotations": [0, 90, 180, 270],
    },
    "binarize": {"mask_inflate": 2},
    "hough": {"rho_res": 1.0, "theta_res": 1.0, "votes": 30, "min_len": 20, "max_gap": 5},
    "merge": {"angle_tol": 2.0, "offset_tol": 3.0, "gap_tol": 10.0},
    "crossing": {"eps": 2.0, "cluster_radius": 3.0, "angle_tol": 10.0, "four_way_rule": "crossover"},
    "attach": {"inflate": 3.0},
    "export": {
        "base_iri": "urn:pidtwin:",
        "predicate": "urn:pidtwin:vocab#connectedTo",
        "budo_template": "{building}_{system}_{class_code}_{ordinal}",
        "building": "B1",
        "system": "H",
        "stamp_time": False,
        "class_map": deep_copy(DEFAULT_CLASS_MAP),
    },
    "runtime": {"workers": 1},
    "debug": {"dump_stages": True},
}

# key -> (minimum, maximum); inclusive
NUMERIC_RANGES: dict[str, tuple[float, float]] = {
    "tiling.tile_size": (16, 20000),
    "tiling.overlap": (0, 10000),
    "detector.threshold": (0.01, 0.99),
    "detector.nms_iou": (0.01, 1.0),
    "binarize.mask_inflate": (0, 100),
    "hough.rho_res": (0.1, 10),
    "hough.theta_res": (0.1, 45),
    "hough.votes": (2, 100000),
    "hough.min_len": (1, 100000),
    "hough.max_gap": (0, 1000),
    "merge.angle_tol": (0, 45),
    "merge.offset_tol": (0, 100),
    "merge.gap_tol": (0, 1000),
    "crossing.eps": (0, 100),
    "crossing.cluster_radius": (0, 100),
    "crossing.angle_tol": (0, 90),
    "attach.inflate": (0, 100),
    "runtime.workers": (1, 256),
}

INTEGER_KEYS = {"tiling.tile_size", "tiling.overlap", "hough.votes", "runtime.workers"}

ENUMS: dict[str, set[str]] = {
    "detector.mode": {"templates", "annotations", "external"},
    "crossing.four_way_rule": {"crossover", "jump"},
}

BUDO_FIELDS = {"building", "system", "class_code", "ordinal"}

STAGE_SECTIONS = ("tiling", "detector", "binarize", "hough", "merge", "crossing", "attach")

# Sections whose children are user-defined (not checked against the defaults).
OPEN_SECTIONS = {"export.class_map"}


def config_path() -> Path:
    return Path(os.getenv("PIDTWIN_CONFIG", "pipeline.yaml"))


def _parse_scalar(raw: str) -> Any:
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def apply_env_overrides(cfg: dict[str, Any], environ: dict[str, str] | None = None) -> dict[str, Any]:
    """PIDTWIN__HOUGH__VOTES=40 -> cfg['hough']['votes'] = 40. Mutates and returns cfg."""
    env = os.environ if environ is None else environ
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        cur = cfg
        for part in parts[:-1]:
            nxt = cur.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                cur[part] = nxt
            cur = nxt
        cur[parts[-1]] = _parse_scalar(env[name])
        log.info("env override %s=%s", ".".join(parts), env[name])
    if env.get("PIDTWIN_WORKERS"):
        cfg.setdefault("runtime", {})["workers"] = _parse_scalar(env["PIDTWIN_WORKERS"])
    return cfg


def load_config(path: Path | None = None, environ: dict[str, str] | None = None) -> dict[str, Any]:
    """pipeline.yaml merged over defaults, then env overrides.

    An explicitly given path must exist. Without a path, a missing default
    file means built-in defaults (logged). Raises ConfigError on invalid content.
    """
    explicit = path is not None
    p = path or config_path()
    cfg = deep_copy(DEFAULT_CONFIG)
    if p.exists():
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{p}: unreadable config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: config must be a YAML mapping")
        deep_merge(cfg, data)
    elif explicit:
        raise ConfigError(f"config file not found: {p}")
    else:
        log.warning("%s not found — using built-in defaults.", p)
    apply_env_overrides(cfg, environ)
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(f"{p}: " + "; ".join(problems))
    return cfg


def _unknown_keys(data: Any, reference: Any, prefix: str = "") -> list[str]:
    if not isinstance(data, dict) or not isinstance(reference, dict):
        return []
    out = []
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in reference:
            out.append(f"unknown key: {path}")
        elif path not in OPEN_SECTIONS:
            out.extend(_unknown_keys(value, reference[key], f"{path}."))
    return out


def budo_template_fields(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def validate_config(cfg: dict[str, Any]) -> list[str]:
    """Return list of problems (empty = OK)."""
    problems = _unknown_keys(cfg, DEFAULT_CONFIG)

    for key, (minimum, maximum) in NUMERIC_RANGES.items():
        value = dget(cfg, key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"not a number: {key}={value!r}")
        elif key in INTEGER_KEYS and int(value) != value:
            problems.append(f"not an integer: {key}={value!r}")
        elif not minimum <= float(value) <= maximum:
            problems.append(f"out of range: {key}={value!r} expected {minimum}..{maximum}")

    for key, allowed in ENUMS.items():
        value = dget(cfg, key)
        if not isinstance(value, str) or value not in allowed:
            problems.append(f"invalid {key}={value!r} expected one of {sorted(allowed)}")

    tile, overlap = dget(cfg, "tiling.tile_size"), dget(cfg, "tiling.overlap")
    if isinstance(tile, (int, float)) and isinstance(overlap, (int, float)) and tile <= 2 * overlap:
        problems.append(f"tiling.tile_size={tile} must exceed 2 × tiling.overlap={overlap}")

    classes = cfg.get("classes")
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) and c for c in classes):
        problems.append("classes must be a non-empty list of names")
    else:
        lowered = [c.lower() for c in classes]
        if len(set(lowered)) != len(lowered):
            problems.append("classes must be unique (case-insensitive)")
        class_map = dget(cfg, "export.class_map") or {}
        for name in classes:
            entry = class_map.get(name)
            if not isinstance(entry, dict) or not entry.get("brick") or not entry.get("budo"):
                problems.append(f"export.class_map.{name} needs 'brick' and 'budo'")

    for key in ("detector.scales", "detector.rotations"):
        value = dget(cfg, key)
        if not isinstance(value, list) or not value:
            problems.append(f"{key} must be a non-empty list")
    scales = dget(cfg, "detector.scales") or []
    if isinstance(scales, list) and any(not isinstance(s, (int, float)) or s <= 0 for s in scales):
        problems.append("detector.scales must be positive numbers")
    rotations = dget(cfg, "detector.rotations") or []
    if isinstance(rotations, list) and any(r not in (0, 90, 180, 270) for r in rotations):
        problems.append("detector.rotations must be right angles (0, 90, 180, 270)")

    template = dget(cfg, "export.budo_template")
    if not isinstance(template, str) or not template:
        problems.append("export.budo_template must be a non-empty string")
    else:
        try:
            unknown = budo_template_fields(template) - BUDO_FIELDS
        except ValueError as exc:
            problems.append(f"export.budo_template malformed: {exc}")
        else:
            if unknown:
                problems.append(f"export.budo_template: unknown field(s) {sorted(unknown)}")
    return problems


def config_digest(cfg: dict[str, Any]) -> str:
    """Digest of the sections that shape outputs; runtime and debug settings are left out."""
    return json_digest({key: cfg.get(key) for key in ("classes", *STAGE_SECTIONS, "export")})


def normalize_config(cfg: dict[str, Any]) -> dict[str, Any]:
    """Resolved configuration as published next to the outputs (config.normalized.json)."""
    return {
        "meta": {"version": 1, "digest": config_digest(cfg)},
        "classes": list(cfg["classes"]),
        "stages": {
            section: deep_copy(cfg[section])
            for section in STAGE_SECTIONS
        },
        "export": {
            **{k: v for k, v in cfg["export"].items() if k != "class_map"},
            "class_map": {
                name: {
                    "brick": brick_iri(cfg["export"]["class_map"][name]["brick"]),
                    "budo": cfg["export"]["class_map"][name]["budo"],
                }
                for name in cfg["classes"]
            },
        },
        "runtime": deep_copy(cfg["runtime"]),
    }


def brick_iri(value: str) -> str:
    return value if ":" in value else BRICK_NS + value
