"""Pre-run validation and normalized configuration export."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

from .config import config_digest, load_config, normalize_config
from .errors import PidTwinError
from .pipeline import PipelineConfig, resolve_templates
from .util import enable_utf8_stdio, write_json_atomic

log = logging.getLogger("pidtwin.preflight")


def run_preflight(config_path: Path | None, out_dir: Path) -> int:
    try:
        cfg = load_config(config_path)
    except PidTwinError as exc:
        print(f"❌ config: {exc}")
        return 1
    pc = PipelineConfig.from_config(cfg)
    print(f"✅ config OK — digest={config_digest(cfg)}, classes={', '.join(pc.classes)}, "
          f"detector={pc.detector_mode}, four-way rule={pc.four_way_rule}")
    print(f"✅ tiling {pc.tile_size}px / overlap {pc.overlap}px, hough votes={pc.hough.votes} "
          f"min_len={pc.hough.min_len:g} max_gap={pc.hough.max_gap:g}")

    ok = True
    if pc.detector_mode == "templates":
        try:
            templates = resolve_templates(pc)
            covered = sorted({t.cls for t in templates})
            print(f"✅ templates ({pc.templates_dir}): {len(templates)} file(s), classes {covered}")
            uncovered = sorted(set(pc.classes) - set(covered))
            if uncovered:
                print(f"❌ no template for class(es) {uncovered}")
                ok = False
        except PidTwinError as exc:
            print(f"❌ templates: {exc}")
            ok = False

    try:
        normalized = normalize_config(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"❌ config: normalization failed: {exc}")
        return 1
    write_json_atomic(Path(out_dir) / "config.normalized.json", normalized)
    print(f"✅ exported {Path(out_dir) / 'config.normalized.json'}")
    return 0 if ok else 1


if __name__ == "__main__":
    enable_utf8_stdio()
    logging.basicConfig(level="INFO", format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_preflight(Path(sys.argv[1]) if len(sys.argv) > 1 else None, Path("out")))
