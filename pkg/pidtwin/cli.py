"""Command line: extract / eval / overlay / check / synth.

Exit codes: 0 success, 1 configuration error, 2 input error, 3 pipeline error.
Environment: PIDTWIN_CONFIG, PIDTWIN__<SECTION>__<KEY>, PIDTWIN_WORKERS, LOG_LEVEL.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import PidTwinError
from .evalkit import report_table
from .pipeline import evaluate_dirs, run_debug_overlay, run_extract, write_eval_report
from .preflight import run_preflight
from .synthetic import Perturbation, generate_synthetic_plan, junction_layout, random_layout, sample_layout, write_fixture
from .util import enable_utf8_stdio

log = logging.getLogger("pidtwin.cli")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pid2twin", description="pid-twin — P&ID plan to topology graph and twin exports")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="plan image -> topology.json, graph.ttl, labels.csv, manifest.json")
    ex.add_argument("plan", type=Path)
    ex.add_argument("--config", type=Path, default=None, help="pipeline.yaml (default: $PIDTWIN_CONFIG)")
    ex.add_argument("--out", type=Path, default=Path("out"))
    ex.add_argument("--detector-mode", choices=["templates", "annotations", "external"], default=None)
    ex.add_argument("--annotations", type=Path, default=None, help="annotation JSON (annotations/external modes)")
    ex.add_argument("--workers", type=int, default=None)

    ev = sub.add_parser("eval", help="score prediction files against ground truth")
    ev.add_argument("pred_dir", type=Path)
    ev.add_argument("truth_dir", type=Path)
    ev.add_argument("--mode", choices=["symbols", "connections"], required=True)
    ev.add_argument("--out", type=Path, default=Path("out/eval"))
    ev.add_argument("--iou", type=float, default=0.5)

    ov = sub.add_parser("overlay", help="debug SVG from a plan and its extract outputs")
    ov.add_argument("plan", type=Path)
    ov.add_argument("stage_dir", type=Path)
    ov.add_argument("--out", type=Path, default=None, help="SVG path (default: <stage_dir>/overlay.svg)")

    ck = sub.add_parser("check", help="validate the configuration and export config.normalized.json")
    ck.add_argument("--config", type=Path, default=None)
    ck.add_argument("--out", type=Path, default=Path("out"))

    sy = sub.add_parser("synth", help="write seeded synthetic fixtures (plans/, annotations/, truth/)")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--count", type=int, default=1)
    sy.add_argument("--layout", choices=["random", "sample", "junction-2", "junction-3", "junction-4"],
                    default="random")
    sy.add_argument("--noise", type=float, default=0.0, help="gaussian noise sigma (grey levels)")
    sy.add_argument("--skew", type=float, default=0.0, help="rotation in degrees")
    sy.add_argument("--out", type=Path, default=Path("fixtures"))
    return ap


def _extract(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    manifest = run_extract(args.plan, cfg, args.out, annotations=args.annotations,
                           detector_mode=args.detector_mode, workers=args.workers)
    print(f"✅ {args.plan.name}: {manifest.counts['symbols']} symbol(s), {manifest.counts['edges']} connection(s) "
          f"-> {args.out}")
    return 0


def _eval(args: argparse.Namespace) -> int:
    result = evaluate_dirs(args.pred_dir, args.truth_dir, args.mode, args.iou)
    write_eval_report(result, args.out)
    print(report_table(result.mode, result.counts, result.curve, result.per_class), end="")
    return 0


def _overlay(args: argparse.Namespace) -> int:
    out = run_debug_overlay(args.plan, args.stage_dir, args.out or args.stage_dir / "overlay.svg")
    print(f"✅ {out}")
    return 0


def _synth(args: argparse.Namespace) -> int:
    perturb = Perturbation(noise_sigma=args.noise, skew_deg=args.skew) if (args.noise or args.skew) else None
    for i in range(args.count):
        seed = args.seed + i
        if args.layout == "random":
            layout = random_layout(seed)
        elif args.layout == "sample":
            layout = sample_layout(name=f"sample-{seed:04d}")
        else:
            layout = junction_layout(int(args.layout.rsplit("-", 1)[1]), name=f"{args.layout}-{seed:04d}")
        paths = write_fixture(generate_synthetic_plan(layout, seed, perturb), args.out)
        print(f"✅ {paths['plan']}")
    return 0


COMMANDS = {"extract": _extract, "eval": _eval, "overlay": _overlay, "synth": _synth}


def main(argv: Sequence[str] | None = None) -> int:
    enable_utf8_stdio()
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO"),
        format="%(asctime)s [%(levelname)s] %(message)s",
    )
    if args.command == "check":
        return run_preflight(args.config, args.out)
    try:
        return COMMANDS[args.command](args)
    except PidTwinError as exc:
        print(f"❌ {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
