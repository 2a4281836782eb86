"""Connection derivation: walk each symbol's lines to the nearest elements, through connective crossings.

Every line is parametrized by arc length from its first endpoint. A symbol
occupies the interval where the line clips its (inflated) box; a crossing
occupies the projection of its point. From an origin interval, the walk looks
in both travel directions for the nearest element. Reaching a symbol records
a connection. Reaching a connective crossing fans out along all its lines
except back the way it came. Reaching a blocking crossing (a crossover)
continues straight on across it.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import networkx as nx
import numpy as np

from .crossings import LineCrossing
from .linedetect import LineSegment
from .plancore import BoundingBox, Point
from .symdetect import SymbolDetection
from .twinexport import TopologyGraph, TopologyNode

log = logging.getLogger("pidtwin.topoderive")

TIE_EPS = 1e-6
# absorbs float error in merged endpoints that land on an inflated box edge
CLIP_EPS = 1e-6
FORWARD, BACKWARD = 1, -1


@dataclass(frozen=True, eq=False)
class ConnectionMatrix:
    symbol_ids: tuple[str, ...]
    cells: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.symbol_ids)
        if self.cells.shape != (n, n) or self.cells.dtype != np.bool_:
            raise ValueError(f"cells must be a bool {n}×{n} matrix")
        if len(set(self.symbol_ids)) != n:
            raise ValueError("duplicate symbol ids")
        self.cells.flags.writeable = False

    @classmethod
    def empty(cls, symbol_ids: Iterable[str]) -> ConnectionMatrix:
        ids = tuple(symbol_ids)
        return cls(ids, np.zeros((len(ids), len(ids)), dtype=bool))

    @classmethod
    def from_edges(cls, symbol_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> ConnectionMatrix:
        ids = tuple(symbol_ids)
        index = {s: i for i, s in enumerate(ids)}
        cells = np.zeros((len(ids), len(ids)), dtype=bool)
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-connection on {a}")
            cells[index[a], index[b]] = cells[index[b], index[a]] = True
        return cls(ids, cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConnectionMatrix):
            return NotImplemented
        return self.symbol_ids == other.symbol_ids and np.array_equal(self.cells, other.cells)

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return len(self.symbol_ids)

    def connected(self, a: str, b: str) -> bool:
        return bool(self.cells[self.symbol_ids.index(a), self.symbol_ids.index(b)])

    def edges(self) -> list[tuple[str, str]]:
        """Unordered pairs (smaller id first), sorted."""
        rows, cols = np.nonzero(np.triu(self.cells, k=1))
        pairs = {tuple(sorted((self.symbol_ids[i], self.symbol_ids[j]))) for i, j in zip(rows, cols, strict=True)}
        return sorted(pairs)  # type: ignore[arg-type]

    def transpose(self) -> ConnectionMatrix:
        return ConnectionMatrix(self.symbol_ids, self.cells.T.copy())

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.cells, self.cells.T)) and not bool(np.diag(self.cells).any())

    def reordered(self, symbol_ids: Sequence[str]) -> ConnectionMatrix:
        if sorted(symbol_ids) != sorted(self.symbol_ids):
            raise ValueError("reordering must keep the same symbol ids")
        return ConnectionMatrix.from_edges(symbol_ids, self.edges())


@dataclass(frozen=True)
class PlanElement:
    """A symbol or a crossing; exactly one of the two payloads is set."""

    symbol: SymbolDetection | None = None
    crossing: LineCrossing | None = None

    def __post_init__(self) -> None:
        if (self.symbol is None) == (self.crossing is None):
            raise ValueError("a plan element is either a symbol or a crossing")

    @property
    def kind(self) -> str:
        return "symbol" if self.symbol is not None else "crossing"

    @property
    def id(self) -> str:
        return self.symbol.id if self.symbol is not None else self.crossing.id  # type: ignore[union-attr]

    @property
    def position(self) -> BoundingBox | Point:
        return self.symbol.bbox if self.symbol is not None else self.crossing.at  # type: ignore[union-attr]


def liang_barsky(p1: Point, p2: Point, box: BoundingBox) -> tuple[float, float] | None:
    """Closed-interval clip of p1→p2 against box; (t0, t1) in [0, 1] or None."""
    dx, dy = p2.x - p1.x, p2.y - p1.y
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, p1.x - box.x_min),
        (dx, box.x_max - p1.x),
        (-dy, p1.y - box.y_min),
        (dy, box.y_max - p1.y),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def _symbol_interval(sym: SymbolDetection, line: LineSegment, inflate: float) -> tuple[float, float] | None:
    clip = liang_barsky(line.p1, line.p2, sym.bbox.inflate(inflate + CLIP_EPS))
    if clip is None:
        return None
    return clip[0] * line.length, clip[1] * line.length


def _projection(point: Point, line: LineSegment) -> float:
    ux, uy = line.direction
    return (point.x - line.p1.x) * ux + (point.y - line.p1.y) * uy


def lines_through_symbol(sym: SymbolDetection, segs: Sequence[LineSegment], inflate: float = 3.0) -> list[LineSegment]:
    if inflate < 0:
        raise ValueError("inflate must be >= 0")
    return [s for s in segs if _symbol_interval(sym, s, inflate) is not None]


@dataclass(frozen=True)
class _Placed:
    element: PlanElement
    start: float
    end: float

    @property
    def mid(self) -> float:
        return (self.start + self.end) / 2.0


class _LineIndex:
    """Elements placed on each line, by arc length."""

    def __init__(self, symbols: Sequence[SymbolDetection], segs: Sequence[LineSegment],
                 crossings: Sequence[LineCrossing], inflate: float):
        self.lines = {s.id: s for s in segs}
        self.on_line: dict[str, list[_Placed]] = {s.id: [] for s in segs}
        for sym in symbols:
            for seg in segs:
                interval = _symbol_interval(sym, seg, inflate)
                if interval is not None:
                    self.on_line[seg.id].append(_Placed(PlanElement(symbol=sym), *interval))
        for c in crossings:
            for line_id in c.incident:
                if line_id in self.lines:
                    t = _projection(c.at, self.lines[line_id])
                    self.on_line[line_id].append(_Placed(PlanElement(crossing=c), t, t))

    def placed(self, line_id: str, element_id: str) -> _Placed | None:
        for p in self.on_line.get(line_id, []):
            if p.element.id == element_id:
                return p
        return None

    def nearest(self, line_id: str, origin: _Placed, direction: int) -> list[_Placed]:
        """Nearest elements ahead of origin in one direction; equidistant ones are all kept."""
        best: list[_Placed] = []
        best_d = float("inf")
        for p in self.on_line[line_id]:
            if p.element.id == origin.element.id:
                continue
            if direction == FORWARD:
                if p.mid <= origin.mid + TIE_EPS:
                    continue
                d = max(0.0, p.start - origin.end)
            else:
                if p.mid >= origin.mid - TIE_EPS:
                    continue
                d = max(0.0, origin.start - p.end)
            if d < best_d - TIE_EPS:
                best, best_d = [p], d
            elif abs(d - best_d) <= TIE_EPS:
                best.append(p)
        return sorted(best, key=lambda p: p.element.id)


def nearest_elements(
    sym: SymbolDetection,
    line: LineSegment,
    elements: Sequence[PlanElement],
    inflate: float = 3.0,
) -> list[PlanElement]:
    """At most one element per travel direction (all of them on an exact tie)."""
    symbols = [e.symbol for e in elements if e.symbol is not None and e.symbol.id != sym.id]
    crossings = [e.crossing for e in elements if e.crossing is not None]
    index = _LineIndex([sym, *symbols], [line], crossings, inflate)
    origin = index.placed(line.id, sym.id)
    if origin is None:
        return []
    found = index.nearest(line.id, origin, BACKWARD) + index.nearest(line.id, origin, FORWARD)
    return [p.element for p in found]


def _walk(origin: SymbolDetection, index: _LineIndex) -> tuple[set[str], list[str]]:
    reached: set[str] = set()
    trace: list[str] = []
    visited: set[tuple[str, str, int]] = set()
    stack: list[tuple[_Placed, str, int]] = []
    for line_id in sorted(index.on_line):
        start = index.placed(line_id, origin.id)
        if start is not None:
            stack.append((start, line_id, BACKWARD))
            stack.append((start, line_id, FORWARD))
    stack.reverse()
    while stack:
        here, line_id, direction = stack.pop()
        state = (here.element.id, line_id, direction)
        if state in visited:
            continue
        visited.add(state)
        for hit in index.nearest(line_id, here, direction):
            el = hit.element
            if el.symbol is not None:
                if el.id != origin.id:
                    reached.add(el.id)
                    trace.append(f"{here.element.id} -{line_id}{'+' if direction > 0 else '-'}-> {el.id}")
                continue
            crossing = el.crossing
            assert crossing is not None
            if not crossing.connective:
                trace.append(f"{here.element.id} -{line_id}-> {el.id} (crossover, straight on)")
                stack.append((hit, line_id, direction))
                continue
            trace.append(f"{here.element.id} -{line_id}-> {el.id} (junction, degree {crossing.degree})")
            for next_line in sorted(crossing.incident, reverse=True):
                at = index.placed(next_line, el.id)
                if at is None:
                    continue
                for next_dir in (FORWARD, BACKWARD):
                    if next_line == line_id and next_dir == -direction:
                        continue
                    stack.append((at, next_line, next_dir))
    return reached, trace


def derive_connections(
    symbols: Sequence[SymbolDetection],
    segs: Sequence[LineSegment],
    crossings: Sequence[LineCrossing],
    inflate: float = 3.0,
    workers: int = 1,
) -> ConnectionMatrix:
    """Symmetric connection matrix over the symbols, in the given symbol order."""
    if inflate < 0:
        raise ValueError("inflate must be >= 0")
    index = _LineIndex(symbols, segs, crossings, inflate)
    if workers > 1 and len(symbols) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _walk(s, index), symbols))
    else:
        results = [_walk(s, index) for s in symbols]

    ids = [s.id for s in symbols]
    position = {s: i for i, s in enumerate(ids)}
    cells = np.zeros((len(ids), len(ids)), dtype=bool)
    for i, (sym, (reached, trace)) in enumerate(zip(symbols, results, strict=True)):
        for line in trace:
            log.debug("walk %s: %s", sym.id, line)
        for other in reached:
            cells[i, position[other]] = True
    cells |= cells.T
    np.fill_diagonal(cells, False)
    matrix = ConnectionMatrix(tuple(ids), cells)
    log.info("%d symbol(s), %d connection(s)", len(ids), len(matrix.edges()))
    return matrix


def matrix_to_graph(
    m: ConnectionMatrix,
    symbols: Sequence[SymbolDetection],
    plan_meta: Mapping[str, Any] | None = None,
) -> TopologyGraph:
    if not m.is_symmetric():
        raise ValueError("connection matrix must be symmetric with an empty diagonal")
    if sorted(m.symbol_ids) != sorted(s.id for s in symbols):
        raise ValueError("matrix and symbol list disagree")
    nodes = [TopologyNode(id=s.id, cls=s.cls, bbox=s.bbox) for s in symbols]
    return TopologyGraph.build(nodes, m.edges(), plan_meta)


def topology_to_networkx(g: TopologyGraph) -> nx.Graph:
    graph = nx.Graph(plan=g.plan)
    for n in g.nodes:
        graph.add_node(n.id, cls=n.cls, bbox=tuple(n.bbox.as_list()))
    graph.add_edges_from(g.edges)
    return graph


def matrix_from_graph(g: TopologyGraph) -> ConnectionMatrix:
    return ConnectionMatrix.from_edges([n.id for n in g.nodes], g.edges)
