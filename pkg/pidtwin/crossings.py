"""Line crossings: pairwise intersections, clustering, and the direction-count connectivity rule.

A crossing where two or three directions leave the point is a hydraulic
junction; four leaving directions is a crossover drawn without a jump symbol.
Plans that draw crossovers with jump symbols use the "jump" rule, where a
plain four-way meeting is a real junction.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import networkx as nx

from .linedetect import LineSegment, segment_sort_key
from .plancore import Point

log = logging.getLogger("pidtwin.crossings")

FOUR_WAY_RULES = {"crossover": frozenset({2, 3}), "jump": frozenset({2, 3, 4})}
PARALLEL_EPS = 1e-9


@dataclass(frozen=True)
class LineCrossing:
    id: str
    at: Point
    incident: tuple[str, ...]
    degree: int
    connective: bool

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "at": self.at.as_list(), "incident": list(self.incident),
                "degree": self.degree, "connective": self.connective}

    @classmethod
    def from_json(cls, item: dict[str, Any]) -> LineCrossing:
        return cls(
            id=str(item["id"]),
            at=Point(*map(float, item["at"])),
            incident=tuple(item["incident"]),
            degree=int(item["degree"]),
            connective=bool(item["connective"]),
        )


def intersect(a: LineSegment, b: LineSegment, eps: float = 2.0) -> Point | None:
    """Intersection of two segments, each extended by eps at both ends; None when parallel or apart."""
    if (segment_sort_key(b), b.id) < (segment_sort_key(a), a.id):
        a, b = b, a
    x1, y1, x2, y2 = a.p1.x, a.p1.y, a.p2.x, a.p2.y
    x3, y3, x4, y4 = b.p1.x, b.p1.y, b.p2.x, b.p2.y
    la, lb = a.length, b.length
    den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
    if abs(den) < PARALLEL_EPS * la * lb:
        return None
    t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
    u = -((x1 - x2) * (y1 - y3) - (y1 - y2) * (x1 - x3)) / den
    if not (-eps <= t * la <= la + eps and -eps <= u * lb <= lb + eps):
        return None
    return Point(x1 + t * (x2 - x1), y1 + t * (y2 - y1))


def _cluster(points: list[Point], radius: float) -> list[list[int]]:
    """Single-linkage clusters of point indices, each sorted, clusters ordered by first member."""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(points)))
    graph.add_edges_from(
        (i, j)
        for i in range(len(points))
        for j in range(i + 1, len(points))
        if points[i].distance(points[j]) <= radius
    )
    return sorted(sorted(c) for c in nx.connected_components(graph))


def ray_directions(at: Point, segs: Sequence[LineSegment], min_ray: float) -> list[float]:
    """Angles (degrees, [0, 360)) of the rays leaving `at` along each segment, longer than min_ray."""
    angles = []
    for seg in segs:
        ux, uy = seg.direction
        t = (at.x - seg.p1.x) * ux + (at.y - seg.p1.y) * uy
        t = min(max(t, 0.0), seg.length)
        forward = math.degrees(math.atan2(uy, ux)) % 360.0
        if seg.length - t > min_ray:
            angles.append(forward)
        if t > min_ray:
            angles.append((forward + 180.0) % 360.0)
    return sorted(angles)


def count_directions(angles: Sequence[float], angle_tol: float) -> int:
    """Distinct directions once angles within angle_tol (circularly, chained) are merged."""
    if not angles:
        return 0
    ordered = sorted(a % 360.0 for a in angles)
    groups = 1
    for prev, cur in zip(ordered, ordered[1:]):
        if cur - prev > angle_tol:
            groups += 1
    if groups > 1 and (ordered[0] + 360.0) - ordered[-1] <= angle_tol:
        groups -= 1
    return groups


def is_connective(degree: int, four_way_rule: str = "crossover") -> bool:
    if four_way_rule not in FOUR_WAY_RULES:
        raise ValueError(f"unknown four_way_rule {four_way_rule!r}")
    return degree in FOUR_WAY_RULES[four_way_rule]


def find_crossings(
    segs: Sequence[LineSegment],
    eps: float = 2.0,
    cluster_radius: float = 3.0,
    angle_tol: float = 10.0,
    four_way_rule: str = "crossover",
) -> list[LineCrossing]:
    if four_way_rule not in FOUR_WAY_RULES:
        raise ValueError(f"unknown four_way_rule {four_way_rule!r}")
    ordered = sorted(segs, key=lambda s: (segment_sort_key(s), s.id))
    hits: list[tuple[Point, str, str]] = []
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            p = intersect(a, b, eps)
            if p is not None:
                hits.append((p, a.id, b.id))

    by_id = {s.id: s for s in ordered}
    min_ray = max(eps, cluster_radius)
    found: list[tuple[Point, tuple[str, ...], int, bool]] = []
    for members in _cluster([h[0] for h in hits], cluster_radius):
        at = Point(
            sum(hits[i][0].x for i in members) / len(members),
            sum(hits[i][0].y for i in members) / len(members),
        )
        incident = tuple(sorted({sid for i in members for sid in hits[i][1:]}))
        degree = count_directions(ray_directions(at, [by_id[s] for s in incident], min_ray), angle_tol)
        if degree < 2:
            log.debug("touching fragments at (%.1f, %.1f) %s dropped", at.x, at.y, incident)
            continue
        connective = degree in FOUR_WAY_RULES[four_way_rule]
        if degree >= 5:
            log.warning("%d-direction crossing at (%.1f, %.1f) on %s treated as non-connective",
                        degree, at.x, at.y, ", ".join(incident))
        found.append((at, incident, degree, connective))

    found.sort(key=lambda f: (f[0].y, f[0].x, f[1]))
    crossings = [
        LineCrossing(id=f"LineCrossing-{n}", at=at, incident=incident, degree=degree, connective=connective)
        for n, (at, incident, degree, connective) in enumerate(found, start=1)
    ]
    log.info("%d intersection(s) -> %d crossing(s), %d connective", len(hits), len(crossings),
             sum(c.connective for c in crossings))
    return crossings


def crossings_to_json(crossings: Sequence[LineCrossing]) -> list[dict[str, Any]]:
    return [c.to_json() for c in crossings]


def crossings_from_json(items: Sequence[dict[str, Any]]) -> list[LineCrossing]:
    return [LineCrossing.from_json(i) for i in items]
