"""Run orchestration: extract (plan -> twin exports), eval (dirs -> report), debug overlay.

Every output except manifest.json is byte-identical for identical inputs;
the manifest carries wall-clock stage timings and the sha256 of each output.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .config import config_digest
from .crossings import crossings_from_json, crossings_to_json, find_crossings
from .errors import InputError, PipelineError, UnreadableFile
from .evalkit import (
    ConfusionCounts,
    MetricReport,
    PRCurve,
    match_detections,
    metrics,
    per_class_average_precision,
    pooled_average_precision,
    pr_curve_csv,
    report_table,
    report_to_json,
    score_connections,
    score_connections_by_path,
)
from .linedetect import HoughParams, detect_lines, segments_from_json, segments_to_json
from .overlay import build_overlay_svg
from .plancore import PlanImage, decompose, load_plan
from .symdetect import (
    DEFAULT_CLASSES,
    AnnotationDetector,
    ClassRegistry,
    SymbolDetection,
    Template,
    TemplateDetector,
    ingest_annotations,
    load_templates,
    merge_tile_detections,
    serialize_annotations,
)
from .synthetic import builtin_templates
from .topoderive import derive_connections, matrix_from_graph, matrix_to_graph
from .twinexport import ClassMapping, budo_labels, export_budo, export_json, export_turtle, read_topology
from .util import dumps_json, file_sha256, write_json_atomic, write_text_atomic

log = logging.getLogger("pidtwin.pipeline")


@dataclass(frozen=True)
class PipelineConfig:
    """Typed view of the resolved configuration."""

    classes: tuple[str, ...]
    tile_size: int
    overlap: int
    detector_mode: str
    threshold: float
    nms_iou: float
    templates_dir: str
    scales: tuple[float, ...]
    rotations: tuple[int, ...]
    mask_inflate: float
    hough: HoughParams
    merge_angle_tol: float
    merge_gap_tol: float
    merge_offset_tol: float
    crossing_eps: float
    cluster_radius: float
    crossing_angle_tol: float
    four_way_rule: str
    attach_inflate: float
    base_iri: str
    predicate: str
    budo_template: str
    building: str
    system: str
    stamp_time: bool
    mapping: ClassMapping
    workers: int
    dump_stages: bool
    digest: str
    raw: dict[str, Any] = field(repr=False, compare=False)

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> PipelineConfig:
        det, cr, ex = cfg["detector"], cfg["crossing"], cfg["export"]
        return cls(
            classes=tuple(cfg["classes"]),
            tile_size=int(cfg["tiling"]["tile_size"]),
            overlap=int(cfg["tiling"]["overlap"]),
            detector_mode=str(det["mode"]),
            threshold=float(det["threshold"]),
            nms_iou=float(det["nms_iou"]),
            templates_dir=str(det["templates_dir"]),
            scales=tuple(float(s) for s in det["scales"]),
            rotations=tuple(int(r) for r in det["rotations"]),
            mask_inflate=float(cfg["binarize"]["mask_inflate"]),
            hough=HoughParams.from_config(cfg),
            merge_angle_tol=float(cfg["merge"]["angle_tol"]),
            merge_gap_tol=float(cfg["merge"]["gap_tol"]),
            merge_offset_tol=float(cfg["merge"]["offset_tol"]),
            crossing_eps=float(cr["eps"]),
            cluster_radius=float(cr["cluster_radius"]),
            crossing_angle_tol=float(cr["angle_tol"]),
            four_way_rule=str(cr["four_way_rule"]),
            attach_inflate=float(cfg["attach"]["inflate"]),
            base_iri=str(ex["base_iri"]),
            predicate=str(ex["predicate"]),
            budo_template=str(ex["budo_template"]),
            building=str(ex["building"]),
            system=str(ex["system"]),
            stamp_time=bool(ex["stamp_time"]),
            mapping=ClassMapping.from_config(cfg),
            workers=int(cfg["runtime"]["workers"]),
            dump_stages=bool(cfg["debug"]["dump_stages"]),
            digest=config_digest(cfg),
            raw=cfg,
        )

    @property
    def registry(self) -> ClassRegistry:
        return ClassRegistry(self.classes)


@dataclass
class RunManifest:
    config_hash: str
    inputs: dict[str, str | None]
    stage_timings_s: dict[str, float] = field(default_factory=dict)
    total_s: float = 0.0
    outputs: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    detector_mode: str = ""
    workers: int = 1
    version: str = __version__

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


class _LapTimer:
    """Contiguous stage laps, so the laps add up to the elapsed total."""

    def __init__(self) -> None:
        self.start = self.mark = time.perf_counter()
        self.laps: dict[str, float] = {}

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.laps[stage] = round(now - self.mark, 6)
        self.mark = now
        log.info("stage %-11s %.3f s", stage, self.laps[stage])

    @property
    def total(self) -> float:
        return round(self.mark - self.start, 6)


# ---------------------------------------------------------------------------
# Extract
# ---------------------------------------------------------------------------
def resolve_templates(pc: PipelineConfig) -> list[Template]:
    """Glyph templates drawn in code for "builtin", else `<class>[_variant].png` files."""
    if pc.templates_dir == "builtin":
        return builtin_templates([c for c in pc.classes if c in DEFAULT_CLASSES])
    return load_templates(Path(pc.templates_dir), pc.registry)


def detect_symbols(plan: PlanImage, pc: PipelineConfig, mode: str, annotations: Path | None,
                   workers: int) -> tuple[list[SymbolDetection], int]:
    """Symbols in plan coordinates and the number of tiles the plan was cut into."""
    tiles = decompose(plan, pc.tile_size, pc.overlap)
    if mode in ("annotations", "external"):
        if annotations is None:
            raise UnreadableFile(f"detector mode '{mode}' needs --annotations <file>")
        if mode == "annotations":
            detector = AnnotationDetector(Path(annotations), pc.registry)
        else:
            detector = AnnotationDetector(Path(annotations), pc.registry, min_score=pc.threshold, nms_iou=pc.nms_iou)
        return detector.detect(plan), len(tiles)

    detector = TemplateDetector(resolve_templates(pc), pc.threshold, pc.scales, pc.rotations,
                                pc.nms_iou)
    if workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            found = list(pool.map(lambda t: detector.detect(t.image), tiles))
    else:
        found = [detector.detect(t.image) for t in tiles]
    for tile, dets in zip(tiles, found, strict=True):
        log.debug("tile %s @(%d, %d): %d detection(s)", tile.index, tile.offset_x, tile.offset_y, len(dets))
    return merge_tile_detections(list(zip(tiles, found, strict=True)), pc.nms_iou), len(tiles)


def final_check(out_dir: Path, names: Sequence[str]) -> list[str]:
    """Return list of problems (empty = outputs complete)."""
    problems = []
    for name in names:
        p = out_dir / name
        if not p.exists() or p.stat().st_size == 0:
            problems.append(f"missing or empty: {name}")
    return problems


def run_extract(
    plan_path: Path,
    cfg: dict[str, Any],
    out_dir: Path,
    annotations: Path | None = None,
    detector_mode: str | None = None,
    workers: int | None = None,
) -> RunManifest:
    pc = PipelineConfig.from_config(cfg)
    mode = detector_mode or pc.detector_mode
    if mode not in ("templates", "annotations", "external"):
        raise PipelineError(f"unknown detector mode {mode!r}")
    n_workers = max(1, workers if workers is not None else pc.workers)
    plan_path, out_dir = Path(plan_path), Path(out_dir)
    timer = _LapTimer()

    plan = load_plan(plan_path)
    timer.lap("load")
    symbols, n_tiles = detect_symbols(plan, pc, mode, annotations, n_workers)
    timer.lap("symbols")
    segs = detect_lines(plan, [s.bbox for s in symbols], cfg)
    timer.lap("lines")
    crossings = find_crossings(segs, pc.crossing_eps, pc.cluster_radius, pc.crossing_angle_tol, pc.four_way_rule)
    timer.lap("crossings")
    matrix = derive_connections(symbols, segs, crossings, pc.attach_inflate, n_workers)
    timer.lap("connections")

    meta = {
        "plan": plan.source_id,
        "config_hash": pc.digest,
        "extracted_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds") if pc.stamp_time else None,
    }
    graph = matrix_to_graph(matrix, symbols, meta)
    labels = budo_labels(graph, pc.mapping, pc.budo_template, pc.building, pc.system)
    texts = {
        "topology.json": export_json(graph),
        "graph.ttl": export_turtle(graph, pc.mapping, pc.predicate, pc.base_iri, labels),
        "labels.csv": export_budo(graph, pc.mapping, pc.budo_template, pc.building, pc.system),
        "symbols.json": serialize_annotations(plan.source_id, symbols),
    }
    if pc.dump_stages:
        texts["segments.json"] = dumps_json(segments_to_json(segs))
        texts["crossings.json"] = dumps_json(crossings_to_json(crossings))
    for name, text in texts.items():
        write_text_atomic(out_dir / name, text)
    timer.lap("export")

    problems = final_check(out_dir, list(texts))
    if problems:
        raise PipelineError("; ".join(problems))
    manifest = RunManifest(
        config_hash=pc.digest,
        inputs={"plan": str(plan_path), "annotations": str(annotations) if annotations else None},
        stage_timings_s=dict(timer.laps),
        total_s=timer.total,
        outputs={name: file_sha256(out_dir / name) for name in sorted(texts)},
        counts={
            "tiles": n_tiles,
            "symbols": len(symbols),
            "segments": len(segs),
            "crossings": len(crossings),
            "connective_crossings": sum(c.connective for c in crossings),
            "edges": len(graph.edges),
        },
        detector_mode=mode,
        workers=n_workers,
    )
    write_json_atomic(out_dir / "manifest.json", manifest.to_json())
    log.info("done: %s -> %s (%d symbol(s), %d edge(s), %.2f s)", plan_path.name, out_dir,
             len(symbols), len(graph.edges), manifest.total_s)
    return manifest


# ---------------------------------------------------------------------------
# Eval
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EvalResult:
    mode: str
    counts: ConfusionCounts
    report: MetricReport
    curve: PRCurve | None
    per_class: dict[str, PRCurve] | None = None
    mean_ap: float | None = None
    by_path: dict[str, ConfusionCounts] | None = None


def _stems(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise UnreadableFile(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.glob("*.json"))}


def evaluate_dirs(pred_dir: Path, truth_dir: Path, mode: str, iou_threshold: float = 0.5) -> EvalResult:
    if mode not in ("symbols", "connections"):
        raise InputError(f"unknown eval mode {mode!r}; expected symbols or connections")
    pred, truth = _stems(Path(pred_dir)), _stems(Path(truth_dir))
    if set(pred) != set(truth):
        raise InputError(f"file stems differ: only in predictions {sorted(set(pred) - set(truth))}, "
                         f"only in truth {sorted(set(truth) - set(pred))}")
    if not pred:
        log.warning("no plan to evaluate in %s / %s — metrics undefined", pred_dir, truth_dir)

    if mode == "symbols":
        plans = [(stem, ingest_annotations(pred[stem]), ingest_annotations(truth[stem])) for stem in sorted(pred)]
        counts = ConfusionCounts.sum(match_detections(p, t, iou_threshold).counts for _, p, t in plans)
        per_class, mean_ap = per_class_average_precision(plans, iou_threshold)
        return EvalResult(mode, counts, metrics(counts), pooled_average_precision(plans, iou_threshold),
                          per_class=per_class, mean_ap=mean_ap)

    counts = ConfusionCounts()
    by_path: dict[str, ConfusionCounts] = {}
    for stem in sorted(pred):
        t_graph = read_topology(truth[stem])
        p_matrix, t_matrix = matrix_from_graph(read_topology(pred[stem])), matrix_from_graph(t_graph)
        counts = counts + score_connections(p_matrix, t_matrix)
        kinds_raw = t_graph.plan_meta.get("path_kinds") or {}
        kinds = {tuple(k.split("|", 1)): v for k, v in kinds_raw.items()}
        for kind, c in score_connections_by_path(p_matrix, t_matrix, kinds).items():
            by_path[kind] = by_path.get(kind, ConfusionCounts()) + c
    return EvalResult(mode, counts, metrics(counts), None, by_path=dict(sorted(by_path.items())))


def write_eval_report(result: EvalResult, out_dir: Path) -> None:
    extra = None
    if result.by_path is not None:
        recall = {k: metrics(c).recall for k, c in result.by_path.items()}
        extra = {"recall_by_path": {k: None if v is None else round(v, 6) for k, v in recall.items()}}
    write_json_atomic(out_dir / "report.json",
                      report_to_json(result.mode, result.counts, result.curve, result.per_class, result.mean_ap,
                                     extra))
    write_text_atomic(out_dir / "report.txt", report_table(result.mode, result.counts, result.curve,
                                                           result.per_class))
    write_text_atomic(out_dir / "pr_curve.csv", pr_curve_csv(result.curve))


def run_eval(pred_dir: Path, truth_dir: Path, mode: str, out_dir: Path | None = None,
             iou_threshold: float = 0.5) -> tuple[MetricReport, PRCurve | None]:
    result = evaluate_dirs(pred_dir, truth_dir, mode, iou_threshold)
    if out_dir is not None:
        write_eval_report(result, Path(out_dir))
    log.info("eval %s: tp=%d fp=%d fn=%d tn=%d", mode, result.counts.tp, result.counts.fp, result.counts.fn,
             result.counts.tn)
    return result.report, result.curve


# ---------------------------------------------------------------------------
# Debug overlay
# ---------------------------------------------------------------------------
def _read_stage(stage_dir: Path, name: str) -> Any:
    path = stage_dir / name
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UnreadableFile(f"missing stage output {path} (run extract with debug.dump_stages)") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc


def run_debug_overlay(plan_path: Path, stage_dir: Path, out_svg: Path) -> Path:
    stage_dir, out_svg = Path(stage_dir), Path(out_svg)
    plan = load_plan(Path(plan_path))
    segs = segments_from_json(_read_stage(stage_dir, "segments.json"))
    crossings = crossings_from_json(_read_stage(stage_dir, "crossings.json"))
    if not (stage_dir / "topology.json").exists():
        raise UnreadableFile(f"missing stage output {stage_dir / 'topology.json'}")
    graph = read_topology(stage_dir / "topology.json")
    write_text_atomic(out_svg, build_overlay_svg(plan, segs, crossings, graph))
    log.info("overlay %s: %d segment(s), %d crossing(s), %d symbol(s), %d edge(s)", out_svg.name, len(segs),
             len(crossings), len(graph.nodes), len(graph.edges))
    return out_svg
