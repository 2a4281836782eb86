"""Shared test helpers that are safe to import from test modules."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from pidtwin.linedetect import LineSegment
from pidtwin.plancore import BoundingBox, PlanImage, Point, plan_from_array
from pidtwin.symdetect import SymbolDetection
from pidtwin.twinexport import TopologyGraph, TopologyNode, export_json
from pidtwin.util import write_text_atomic


def seg(sid: str, x1: float, y1: float, x2: float, y2: float) -> LineSegment:
    return LineSegment(sid, Point(x1, y1), Point(x2, y2))


def sym(sid: str, cls: str, x0: float, y0: float, x1: float, y1: float, score: float = 1.0) -> SymbolDetection:
    return SymbolDetection(id=sid, cls=cls, bbox=BoundingBox(x0, y0, x1, y1), score=score)


def sym_at(sid: str, cls: str, cx: float, cy: float, half: float = 12) -> SymbolDetection:
    return sym(sid, cls, cx - half, cy - half, cx + half, cy + half)


def blank_plan(width: int = 200, height: int = 200, name: str = "blank") -> PlanImage:
    return plan_from_array(np.full((height, width), 255, np.uint8), name)


def grid_nodes(ids: Sequence[str], cls: str = "Valve") -> list[TopologyNode]:
    """Non-overlapping 20 px boxes on a 10-wide grid."""
    return [
        TopologyNode(id=i, cls=cls, bbox=BoundingBox(40.0 * (k % 10), 40.0 * (k // 10),
                                                     40.0 * (k % 10) + 20, 40.0 * (k // 10) + 20))
        for k, i in enumerate(ids)
    ]


def write_topology(path: Path, plan: str, ids: Sequence[str], edges: Iterable[tuple[str, str]],
                   meta: dict | None = None) -> TopologyGraph:
    g = TopologyGraph.build(grid_nodes(ids), edges, {"plan": plan, **(meta or {})})
    write_text_atomic(path, export_json(g))
    return g
