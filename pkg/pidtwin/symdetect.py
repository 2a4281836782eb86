"""Symbol detection contract: template-matching baseline, annotation ingestion, seam merging.

Every producer yields SymbolDetection lists in plan coordinates. The
Annotation JSON format is shared by ground truth and external detectors:

    {"plan": "name", "symbols": [{"id": "Pump-4", "class": "Pump",
                                  "bbox": [x_min, y_min, x_max, y_max], "score": 0.97}]}
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Protocol

import cv2
import numpy as np
from PIL import Image

from .errors import BoxOutOfBounds, EmptyTemplateSet, SchemaViolation, UnreadableFile
from .plancore import BoundingBox, PlanImage, Tile, box_iou, to_plan_coords
from .util import class_key, dumps_json

log = logging.getLogger("pidtwin.symdetect")

DEFAULT_CLASSES = ("Pump", "Valve", "HeatExchanger", "Flap")
DEFAULT_SCALES = (0.75, 1.0, 1.25)
DEFAULT_ROTATIONS = (0, 90, 180, 270)
DEFAULT_NMS_IOU = 0.5


class ClassRegistry:
    """Known symbol classes; lookup ignores case, spaces, hyphens and underscores."""

    def __init__(self, names: Iterable[str] = DEFAULT_CLASSES):
        self.names: tuple[str, ...] = tuple(names)
        self._by_key: dict[str, str] = {}
        for name in self.names:
            key = class_key(name)
            if not key:
                raise ValueError(f"invalid class name {name!r}")
            if key in self._by_key:
                raise ValueError(f"duplicate class name {name!r}")
            self._by_key[key] = name

    def resolve(self, name: str) -> str | None:
        return self._by_key.get(class_key(name))

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.resolve(name) is not None

    def __iter__(self):
        return iter(self.names)


DEFAULT_REGISTRY = ClassRegistry()


@dataclass(frozen=True)
class SymbolDetection:
    id: str
    cls: str
    bbox: BoundingBox
    score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"{self.id}: score {self.score} outside [0, 1]")

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "class": self.cls, "bbox": self.bbox.as_list(), "score": self.score}


@dataclass(frozen=True, eq=False)
class Template:
    """Binary ink mask of one symbol glyph (True = ink)."""

    cls: str
    mask: np.ndarray
    native_scale: int

    def __post_init__(self) -> None:
        if self.mask.size == 0 or not self.mask.any():
            raise ValueError(f"empty template mask for {self.cls}")


class Detector(Protocol):
    def detect(self, plan: PlanImage) -> list[SymbolDetection]: ...


def detection_sort_key(det: SymbolDetection) -> tuple:
    return (-det.score, det.bbox.sort_key(), det.cls, det.id)


def reading_order_key(det: SymbolDetection) -> tuple:
    return (det.bbox.y_min, det.bbox.x_min, det.bbox.y_max, det.bbox.x_max, det.cls)


def assign_ids(detections: Sequence[SymbolDetection]) -> list[SymbolDetection]:
    """Renumber as '<Class>-<ordinal>' with one counter over all classes, in reading order."""
    ordered = sorted(detections, key=reading_order_key)
    return [replace(det, id=f"{det.cls}-{n}") for n, det in enumerate(ordered, start=1)]


def suppress_duplicates(detections: Sequence[SymbolDetection], iou_threshold: float) -> list[SymbolDetection]:
    """Per-class greedy NMS: highest score wins, ties broken by lexicographic bbox order."""
    kept: list[SymbolDetection] = []
    for det in sorted(detections, key=detection_sort_key):
        if any(k.cls == det.cls and box_iou(k.bbox, det.bbox) >= iou_threshold for k in kept):
            continue
        kept.append(det)
    return kept


# ---------------------------------------------------------------------------
# Template matching baseline
# ---------------------------------------------------------------------------
def _template_variants(template: Template, scales: Sequence[float], rotations: Sequence[int]):
    ink = template.mask.astype(np.uint8)
    for scale in scales:
        h = max(1, int(round(ink.shape[0] * scale)))
        w = max(1, int(round(ink.shape[1] * scale)))
        scaled = cv2.resize(ink, (w, h), interpolation=cv2.INTER_NEAREST) if scale != 1.0 else ink
        for rotation in rotations:
            rotated = np.rot90(scaled, k=(rotation // 90) % 4)
            # ink dark on white paper, same polarity as the plan
            yield scale, rotation, np.where(rotated > 0, 0.0, 255.0).astype(np.float32)


def detect_templates(
    plan: PlanImage,
    templates: Sequence[Template],
    threshold: float,
    scales: Sequence[float] = DEFAULT_SCALES,
    rotations: Sequence[int] = DEFAULT_ROTATIONS,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[SymbolDetection]:
    """Zero-mean normalized cross-correlation over a scale pyramid and right-angle rotations."""
    if not templates:
        raise EmptyTemplateSet("template matching needs at least one template")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    image = plan.pixels.astype(np.float32)
    if float(image.std()) == 0.0:
        return []

    candidates: list[SymbolDetection] = []
    kernel = np.ones((3, 3), np.uint8)
    for template in templates:
        for scale, rotation, variant in _template_variants(template, scales, rotations):
            th, tw = variant.shape
            if th > plan.height or tw > plan.width or float(variant.std()) == 0.0:
                continue
            scores = cv2.matchTemplate(image, variant, cv2.TM_CCOEFF_NORMED)
            scores = np.nan_to_num(scores, nan=0.0, posinf=0.0, neginf=0.0)
            peaks = (scores >= threshold) & (scores == cv2.dilate(scores, kernel))
            for y, x in zip(*np.nonzero(peaks), strict=True):
                score = float(min(1.0, scores[y, x]))
                candidates.append(SymbolDetection(
                    id="",
                    cls=template.cls,
                    bbox=BoundingBox(float(x), float(y), float(x + tw), float(y + th)),
                    score=score,
                ))
            log.debug("template %s scale=%.2f rot=%d: %d peak(s)", template.cls, scale, rotation,
                      int(peaks.sum()))
    kept = suppress_duplicates(candidates, nms_iou)
    log.debug("%s: %d candidate(s) -> %d after NMS", plan.source_id, len(candidates), len(kept))
    return assign_ids(kept)


def load_templates(directory: Path, registry: ClassRegistry = DEFAULT_REGISTRY) -> list[Template]:
    """Templates from `<class>[_variant].png` files; dark pixels are ink."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyTemplateSet(f"template directory not found: {directory}")
    templates = []
    for path in sorted(directory.glob("*.png")):
        cls = registry.resolve(path.stem.split("_", 1)[0])
        if cls is None:
            log.warning("template %s: unknown class — skipped", path.name)
            continue
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
        mask = gray < 128
        if not mask.any():
            log.warning("template %s: no ink — skipped", path.name)
            continue
        templates.append(Template(cls=cls, mask=mask, native_scale=int(max(mask.shape))))
    if not templates:
        raise EmptyTemplateSet(f"no usable template in {directory}")
    return templates


@dataclass
class TemplateDetector:
    templates: Sequence[Template]
    threshold: float
    scales: Sequence[float] = DEFAULT_SCALES
    rotations: Sequence[int] = DEFAULT_ROTATIONS
    nms_iou: float = DEFAULT_NMS_IOU

    def detect(self, plan: PlanImage) -> list[SymbolDetection]:
        return detect_templates(plan, self.templates, self.threshold, self.scales, self.rotations, self.nms_iou)


# ---------------------------------------------------------------------------
# Annotation JSON
# ---------------------------------------------------------------------------
def _schema_error(path: Path, where: str, message: str) -> SchemaViolation:
    return SchemaViolation(f"{path}: {where}: {message}")


def parse_annotations(
    text: str,
    path: Path,
    plan: PlanImage | None = None,
    registry: ClassRegistry = DEFAULT_REGISTRY,
) -> tuple[str, list[SymbolDetection]]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise _schema_error(path, "$", "expected an object with 'plan' and 'symbols'")
    plan_name = data.get("plan")
    if not isinstance(plan_name, str):
        raise _schema_error(path, "plan", "expected a string")
    symbols = data.get("symbols")
    if not isinstance(symbols, list):
        raise _schema_error(path, "symbols", "expected a list")
    unknown_top = sorted(set(data) - {"plan", "symbols"})
    if unknown_top:
        raise _schema_error(path, "$", f"unknown field(s) {unknown_top}")

    parsed: list[tuple[str | None, str, BoundingBox, float]] = []
    for i, item in enumerate(symbols):
        where = f"symbols[{i}]"
        if not isinstance(item, dict):
            raise _schema_error(path, where, "expected an object")
        extra = sorted(set(item) - {"id", "class", "bbox", "score"})
        if extra:
            raise _schema_error(path, where, f"unknown field(s) {extra}")
        raw_cls = item.get("class")
        if not isinstance(raw_cls, str):
            raise _schema_error(path, f"{where}.class", "expected a string")
        cls = registry.resolve(raw_cls)
        if cls is None:
            raise _schema_error(path, f"{where}.class", f"unknown class {raw_cls!r}, known: {list(registry)}")
        bbox = item.get("bbox")
        if (not isinstance(bbox, list) or len(bbox) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox)):
            raise _schema_error(path, f"{where}.bbox", "expected 4 numbers [x_min, y_min, x_max, y_max]")
        try:
            box = BoundingBox.from_list(bbox)
        except ValueError as exc:
            raise _schema_error(path, f"{where}.bbox", str(exc)) from exc
        if plan is not None and not box.within(plan.width, plan.height):
            raise BoxOutOfBounds(f"{path}: {where}.bbox {bbox} exceeds plan {plan.width}×{plan.height}")
        score = item.get("score", 1.0)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
            raise _schema_error(path, f"{where}.score", "expected a number in [0, 1]")
        ident = item.get("id")
        if ident is not None and (not isinstance(ident, str) or not ident):
            raise _schema_error(path, f"{where}.id", "expected a non-empty string")
        parsed.append((ident, cls, box, float(score)))

    taken = {ident for ident, *_ in parsed if ident is not None}
    if len(taken) != sum(1 for ident, *_ in parsed if ident is not None):
        raise _schema_error(path, "symbols", "duplicate ids")
    detections = []
    for ordinal, (ident, cls, box, score) in enumerate(parsed, start=1):
        if ident is None:
            n = ordinal
            while f"{cls}-{n}" in taken:
                n += 1
            ident = f"{cls}-{n}"
            taken.add(ident)
        detections.append(SymbolDetection(id=ident, cls=cls, bbox=box, score=score))
    if plan is not None and plan_name != plan.source_id:
        log.debug("%s: annotation plan %r differs from image %r", path.name, plan_name, plan.source_id)
    return plan_name, detections


def ingest_annotations(
    path: Path,
    plan: PlanImage | None = None,
    registry: ClassRegistry = DEFAULT_REGISTRY,
) -> list[SymbolDetection]:
    """Detections from an Annotation JSON file; missing ids become '<Class>-<ordinal>'."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"{path}: cannot read annotations ({exc})") from exc
    _, detections = parse_annotations(text, path, plan, registry)
    log.info("%s: %d symbol(s) ingested", path.name, len(detections))
    return detections


def serialize_annotations(plan_id: str, detections: Sequence[SymbolDetection]) -> str:
    return dumps_json({"plan": plan_id, "symbols": [d.to_json() for d in detections]})


@dataclass
class AnnotationDetector:
    """Ground truth or external-detector output; external output is thresholded and de-duplicated."""

    path: Path
    registry: ClassRegistry = DEFAULT_REGISTRY
    min_score: float = 0.0
    nms_iou: float | None = None

    def detect(self, plan: PlanImage) -> list[SymbolDetection]:
        detections = ingest_annotations(self.path, plan, self.registry)
        if self.min_score > 0.0:
            detections = [d for d in detections if d.score >= self.min_score]
        if self.nms_iou is not None:
            kept = {d.id for d in suppress_duplicates(detections, self.nms_iou)}
            detections = [d for d in detections if d.id in kept]
        return detections


# ---------------------------------------------------------------------------
# Seam merging
# ---------------------------------------------------------------------------
def merge_tile_detections(
    per_tile: Sequence[tuple[Tile, Sequence[SymbolDetection]]],
    iou_dedup: float = DEFAULT_NMS_IOU,
) -> list[SymbolDetection]:
    """Compose per-tile detections on the whole plan; same-class duplicates across seams collapse."""
    if not 0.0 < iou_dedup <= 1.0:
        raise ValueError(f"iou_dedup must be in (0, 1], got {iou_dedup}")
    translated = [
        replace(det, bbox=to_plan_coords(tile, det.bbox))
        for tile, detections in per_tile
        for det in detections
    ]
    kept = suppress_duplicates(translated, iou_dedup)
    log.debug("merged %d tile detection(s) into %d", len(translated), len(kept))
    return assign_ids(kept)
