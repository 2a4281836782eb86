"""Line detection: Otsu binarization, symbol masking, probabilistic Hough, collinear merge."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import cv2
import networkx as nx
import numpy as np

from .plancore import BoundingBox, PlanImage, Point

log = logging.getLogger("pidtwin.linedetect")

# blank steps bridged while following a stroke past a Hough endpoint
EXTEND_GAP = 1


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Foreground (ink) mask with the threshold it was cut at; None for a uniform plan."""

    width: int
    height: int
    bits: np.ndarray
    threshold: int | None

    def __post_init__(self) -> None:
        if self.bits.shape != (self.height, self.width) or self.bits.dtype != np.bool_:
            raise ValueError(f"bits must be bool {self.height}×{self.width}")

    @property
    def foreground(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class LineSegment:
    id: str
    p1: Point
    p2: Point

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError(f"{self.id}: zero-length segment")

    @property
    def length(self) -> float:
        return self.p1.distance(self.p2)

    @property
    def angle_deg(self) -> float:
        """Undirected angle in [0, 180)."""
        a = math.degrees(math.atan2(self.p2.y - self.p1.y, self.p2.x - self.p1.x)) % 180.0
        return 0.0 if a >= 180.0 else a

    @property
    def direction(self) -> tuple[float, float]:
        n = self.length
        return ((self.p2.x - self.p1.x) / n, (self.p2.y - self.p1.y) / n)

    def point_at(self, t: float) -> Point:
        """Point at arc length t from p1."""
        dx, dy = self.direction
        return Point(self.p1.x + t * dx, self.p1.y + t * dy)

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "p1": self.p1.as_list(), "p2": self.p2.as_list(),
                "angle_deg": round(self.angle_deg, 6), "length": round(self.length, 6)}


@dataclass(frozen=True)
class HoughParams:
    rho_res: float = 1.0
    theta_res: float = 1.0  # degrees
    votes: int = 30
    min_len: float = 20.0
    max_gap: float = 5.0

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> HoughParams:
        h = cfg.get("hough", {})
        return cls(
            rho_res=float(h.get("rho_res", 1.0)),
            theta_res=float(h.get("theta_res", 1.0)),
            votes=int(h.get("votes", 30)),
            min_len=float(h.get("min_len", 20)),
            max_gap=float(h.get("max_gap", 5)),
        )

    def validate(self) -> None:
        if self.rho_res <= 0 or self.theta_res <= 0:
            raise ValueError("hough resolutions must be positive")
        if self.votes < 1:
            raise ValueError("hough votes must be >= 1")
        if self.min_len < 0 or self.max_gap < 0:
            raise ValueError("hough min_len and max_gap must be >= 0")


def _canonical(p1: Point, p2: Point) -> tuple[Point, Point]:
    return (p1, p2) if (p1.x, p1.y) <= (p2.x, p2.y) else (p2, p1)


def segment_sort_key(seg: LineSegment) -> tuple[float, float, float, float]:
    return (seg.p1.x, seg.p1.y, seg.p2.x, seg.p2.y)


def number_segments(segs: Sequence[LineSegment]) -> list[LineSegment]:
    ordered = sorted(segs, key=segment_sort_key)
    return [LineSegment(f"Line-{n}", s.p1, s.p2) for n, s in enumerate(ordered, start=1)]


# ---------------------------------------------------------------------------
# Binarization
# ---------------------------------------------------------------------------
def otsu_threshold(pixels: np.ndarray) -> int | None:
    """Global Otsu threshold (foreground = value <= threshold); None for a uniform histogram.

    OpenCV reports the lowest level of a flat optimum. Every level up to the
    next occupied one splits the pixels identically, so the middle of that
    empty stretch is returned and two-level images split halfway.
    """
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.size == 0 or int(pixels.min()) == int(pixels.max()):
        return None
    if pixels.ndim != 2:
        pixels = pixels.reshape(1, -1)
    level, _ = cv2.threshold(pixels, 0, 255, cv2.THRESH_BINARY | cv2.THRESH_OTSU)
    low = int(level)
    above = pixels[pixels > low]
    high = int(above.min()) - 1 if above.size else low
    return (low + high) // 2


def binarize(plan: PlanImage) -> BinaryImage:
    threshold = otsu_threshold(plan.pixels)
    if threshold is None:
        log.warning("%s: uniform histogram, no ink found — plan treated as blank", plan.source_id)
        bits = np.zeros((plan.height, plan.width), dtype=bool)
    else:
        bits = plan.pixels <= threshold
    log.debug("%s: otsu threshold %s, %d ink pixel(s)", plan.source_id, threshold, int(bits.sum()))
    return BinaryImage(width=plan.width, height=plan.height, bits=bits, threshold=threshold)


def mask_symbols(image: BinaryImage, boxes: Sequence[BoundingBox], inflate: float = 2) -> BinaryImage:
    """Clear every pixel inside the inflated boxes (inclusive, clipped to the image)."""
    if inflate < 0:
        raise ValueError("inflate must be >= 0")
    bits = image.bits.copy()
    for box in boxes:
        grown = box.inflate(inflate)
        x0 = max(0, math.floor(grown.x_min))
        y0 = max(0, math.floor(grown.y_min))
        x1 = min(image.width - 1, math.ceil(grown.x_max))
        y1 = min(image.height - 1, math.ceil(grown.y_max))
        if x0 <= x1 and y0 <= y1:
            bits[y0:y1 + 1, x0:x1 + 1] = False
    return BinaryImage(width=image.width, height=image.height, bits=bits, threshold=image.threshold)


# ---------------------------------------------------------------------------
# Hough
# ---------------------------------------------------------------------------
def hough_segments(image: BinaryImage, params: HoughParams | None = None) -> list[LineSegment]:
    """Probabilistic Hough on the foreground. OpenCV seeds its sampler with a fixed state."""
    params = params or HoughParams()
    params.validate()
    if not image.bits.any():
        return []
    raw = cv2.HoughLinesP(
        image.bits.astype(np.uint8) * 255,
        params.rho_res,
        math.radians(params.theta_res),
        int(params.votes),
        minLineLength=params.min_len,
        maxLineGap=params.max_gap,
    )
    if raw is None:
        return []
    segs = []
    for x1, y1, x2, y2 in raw.reshape(-1, 4).tolist():
        p1, p2 = _canonical(Point(float(x1), float(y1)), Point(float(x2), float(y2)))
        if p1 == p2 or p1.distance(p2) < params.min_len:
            continue
        segs.append(LineSegment("", p1, p2))
    return number_segments(segs)


def _ink_across(bits: np.ndarray, x: float, y: float, ux: float, uy: float) -> bool:
    """Ink on the pixel under (x, y) or one pixel either side, perpendicular to (ux, uy)."""
    h, w = bits.shape
    for off in (0.0, -1.0, 1.0):
        px = math.floor(x - uy * off + 0.5)
        py = math.floor(y + ux * off + 0.5)
        if 0 <= px < w and 0 <= py < h and bits[py, px]:
            return True
    return False


def _follow_ink(bits: np.ndarray, start: Point, ux: float, uy: float, max_gap: int) -> Point:
    """Last inked point reached stepping 1 px at a time from start, bridging at most max_gap blank steps."""
    last, misses, t = 0, 0, 0
    limit = bits.shape[0] + bits.shape[1]
    while misses <= max_gap and t < limit:
        t += 1
        if _ink_across(bits, start.x + t * ux, start.y + t * uy, ux, uy):
            last, misses = t, 0
        else:
            misses += 1
    return Point(start.x + last * ux, start.y + last * uy)


def extend_segments(image: BinaryImage, segs: Sequence[LineSegment], max_gap: int = EXTEND_GAP) -> list[LineSegment]:
    """Push both endpoints of every segment out along its direction to where the ink ends.

    The probabilistic transform consumes pixels as it samples them, so its
    segments can stop short of the drawn stroke.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    out = []
    for s in segs:
        ux, uy = s.direction
        p1 = _follow_ink(image.bits, s.p1, -ux, -uy, max_gap)
        p2 = _follow_ink(image.bits, s.p2, ux, uy, max_gap)
        out.append(LineSegment(s.id, *_canonical(p1, p2)))
    grown = sum(a.length > b.length + 0.5 for a, b in zip(out, segs, strict=True))
    log.debug("%d of %d segment(s) extended to the stroke ends", grown, len(segs))
    return out


# ---------------------------------------------------------------------------
# Collinear merge
# ---------------------------------------------------------------------------
def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def _perp_distance(p: Point, origin: Point, ux: float, uy: float) -> float:
    return abs((p.x - origin.x) * uy - (p.y - origin.y) * ux)


def _projected_gap(a: LineSegment, b: LineSegment) -> float:
    ux, uy = a.direction
    ta = (0.0, a.length)
    tb = sorted(((p.x - a.p1.x) * ux + (p.y - a.p1.y) * uy) for p in (b.p1, b.p2))
    return max(0.0, max(ta[0], tb[0]) - min(ta[1], tb[1]))


def _collinear(a: LineSegment, b: LineSegment, angle_tol: float, gap_tol: float, offset_tol: float) -> bool:
    if _angle_diff(a.angle_deg, b.angle_deg) > angle_tol:
        return False
    ua, ub = a.direction, b.direction
    if max(_perp_distance(b.p1, a.p1, *ua), _perp_distance(b.p2, a.p1, *ua)) > offset_tol:
        return False
    if max(_perp_distance(a.p1, b.p1, *ub), _perp_distance(a.p2, b.p1, *ub)) > offset_tol:
        return False
    return _projected_gap(a, b) <= gap_tol


def _fuse(members: list[LineSegment]) -> LineSegment:
    """One segment spanning the extreme projections along the length-weighted direction."""
    members = sorted(members, key=segment_sort_key)
    # doubled-angle mean: undirected directions, 0° and 179° average to ~0°
    c = sum(m.length * math.cos(2 * math.radians(m.angle_deg)) for m in members)
    s = sum(m.length * math.sin(2 * math.radians(m.angle_deg)) for m in members)
    theta = 0.5 * math.atan2(s, c)
    ux, uy = math.cos(theta), math.sin(theta)
    total = sum(m.length for m in members)
    cx = sum(m.length * (m.p1.x + m.p2.x) / 2 for m in members) / total
    cy = sum(m.length * (m.p1.y + m.p2.y) / 2 for m in members) / total
    ts = [(p.x - cx) * ux + (p.y - cy) * uy for m in members for p in (m.p1, m.p2)]
    lo, hi = min(ts), max(ts)
    p1, p2 = _canonical(Point(cx + lo * ux, cy + lo * uy), Point(cx + hi * ux, cy + hi * uy))
    return LineSegment("", p1, p2)


def merge_segments(
    segs: Sequence[LineSegment],
    angle_tol: float = 2.0,
    gap_tol: float = 10.0,
    offset_tol: float = 3.0,
) -> list[LineSegment]:
    """Fuse collinear fragments; repeated until no fused pair remains collinear."""
    if angle_tol < 0 or gap_tol < 0 or offset_tol < 0:
        raise ValueError("merge tolerances must be >= 0")
    current = sorted(segs, key=segment_sort_key)
    while True:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(current)))
        graph.add_edges_from(
            (i, j)
            for i in range(len(current))
            for j in range(i + 1, len(current))
            if _collinear(current[i], current[j], angle_tol, gap_tol, offset_tol)
        )
        if graph.number_of_edges() == 0:
            break
        groups = sorted(sorted(c) for c in nx.connected_components(graph))
        current = sorted(
            (current[g[0]] if len(g) == 1 else _fuse([current[i] for i in g]) for g in groups),
            key=segment_sort_key,
        )
    merged = number_segments(current)
    log.debug("merged %d fragment(s) into %d segment(s)", len(segs), len(merged))
    return merged


def detect_lines(plan: PlanImage, boxes: Sequence[BoundingBox], cfg: dict[str, Any]) -> list[LineSegment]:
    """binarize -> mask symbols -> Hough -> extend to stroke ends -> collinear merge."""
    merge = cfg.get("merge", {})
    image = mask_symbols(binarize(plan), boxes, float(cfg.get("binarize", {}).get("mask_inflate", 2)))
    raw = hough_segments(image, HoughParams.from_config(cfg))
    merged = merge_segments(
        extend_segments(image, raw),
        angle_tol=float(merge.get("angle_tol", 2.0)),
        gap_tol=float(merge.get("gap_tol", 10.0)),
        offset_tol=float(merge.get("offset_tol", 3.0)),
    )
    log.info("%s: %d Hough segment(s), %d after merge", plan.source_id, len(raw), len(merged))
    return merged


def segments_to_json(segs: Sequence[LineSegment]) -> list[dict[str, Any]]:
    return [s.to_json() for s in segs]


def segments_from_json(items: Sequence[dict[str, Any]]) -> list[LineSegment]:
    return [LineSegment(str(i["id"]), Point(*map(float, i["p1"])), Point(*map(float, i["p2"]))) for i in items]
