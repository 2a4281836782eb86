"""Seeded synthetic plans with known topology, for tests and desk-scale evaluation.

The truth matrix comes from the layout's declared connections, never from
the rendered raster.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import InfeasibleLayout
from .plancore import BoundingBox, PlanImage, plan_from_array
from .symdetect import DEFAULT_CLASSES, SymbolDetection, Template, serialize_annotations
from .topoderive import ConnectionMatrix, matrix_to_graph
from .twinexport import export_json
from .util import write_text_atomic

log = logging.getLogger("pidtwin.synthetic")

SYMBOL_SIZE = 24
STROKE = 1
CELL = 200
INK, PAPER = 0, 255


@dataclass(frozen=True)
class SymbolSpec:
    id: str
    cls: str
    center: tuple[int, int]


@dataclass(frozen=True)
class Connection:
    a: str
    b: str
    kind: str = "direct"  # direct | corner | junction


@dataclass(frozen=True)
class LayoutSpec:
    """Symbols, polyline runs (drawn as-is) and the declared connectivity."""

    width: int
    height: int
    symbols: tuple[SymbolSpec, ...]
    runs: tuple[tuple[tuple[int, int], ...], ...]
    connections: tuple[Connection, ...]
    stroke: int = STROKE
    symbol_size: int = SYMBOL_SIZE
    name: str = "synthetic"

    def box(self, sym: SymbolSpec) -> BoundingBox:
        half = self.symbol_size // 2
        cx, cy = sym.center
        return BoundingBox(cx - half, cy - half, cx - half + self.symbol_size, cy - half + self.symbol_size)


@dataclass(frozen=True)
class Perturbation:
    noise_sigma: float = 0.0
    skew_deg: float = 0.0


@dataclass(frozen=True, eq=False)
class SyntheticPlan:
    image: PlanImage
    truth_symbols: tuple[SymbolDetection, ...]
    truth_matrix: ConnectionMatrix
    layout: LayoutSpec
    path_kinds: dict[tuple[str, str], str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Glyphs
# ---------------------------------------------------------------------------
def draw_glyph(canvas: np.ndarray, cls: str, x0: int, y0: int, size: int, stroke: int = STROKE) -> None:
    """Pump: circle + triangle. Valve: bow-tie. Heat exchanger: rectangle + diagonal. Flap: circle + bar."""
    x1, y1 = x0 + size - 1, y0 + size - 1
    cx, cy = x0 + size // 2, y0 + size // 2
    r = size // 2 - 2
    if cls == "Pump":
        cv2.circle(canvas, (cx, cy), r, INK, stroke, cv2.LINE_8)
        tri = np.array([[cx - r // 2, cy - r // 2], [cx + r // 2 + 1, cy], [cx - r // 2, cy + r // 2]], np.int32)
        cv2.polylines(canvas, [tri], True, INK, stroke, cv2.LINE_8)
    elif cls == "Valve":
        left = np.array([[x0 + 2, y0 + 5], [cx, cy], [x0 + 2, y1 - 5]], np.int32)
        right = np.array([[x1 - 2, y0 + 5], [cx, cy], [x1 - 2, y1 - 5]], np.int32)
        cv2.polylines(canvas, [left, right], True, INK, stroke, cv2.LINE_8)
    elif cls == "HeatExchanger":
        cv2.rectangle(canvas, (x0 + 2, y0 + 4), (x1 - 2, y1 - 4), INK, stroke, cv2.LINE_8)
        cv2.line(canvas, (x0 + 2, y1 - 4), (x1 - 2, y0 + 4), INK, stroke, cv2.LINE_8)
    elif cls == "Flap":
        cv2.circle(canvas, (cx, cy), r, INK, stroke, cv2.LINE_8)
        cv2.line(canvas, (cx - r + 2, cy + r - 2), (cx + r - 2, cy - r + 2), INK, stroke + 1, cv2.LINE_8)
    else:
        raise InfeasibleLayout(f"no glyph for class {cls!r}")


def glyph_template(cls: str, size: int = SYMBOL_SIZE, stroke: int = STROKE) -> Template:
    canvas = np.full((size, size), PAPER, np.uint8)
    draw_glyph(canvas, cls, 0, 0, size, stroke)
    return Template(cls=cls, mask=canvas < 128, native_scale=size)


def builtin_templates(classes: Sequence[str] = DEFAULT_CLASSES) -> list[Template]:
    return [glyph_template(cls) for cls in classes]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------
def check_layout(spec: LayoutSpec) -> None:
    ids = [s.id for s in spec.symbols]
    if len(set(ids)) != len(ids):
        raise InfeasibleLayout("duplicate symbol ids")
    half = spec.symbol_size // 2
    for s in spec.symbols:
        x0, y0 = s.center[0] - half, s.center[1] - half
        if x0 < 0 or y0 < 0 or x0 + spec.symbol_size > spec.width or y0 + spec.symbol_size > spec.height:
            raise InfeasibleLayout(f"{s.id} leaves the {spec.width}×{spec.height} canvas")
    boxes = {s.id: spec.box(s) for s in spec.symbols}
    ordered = sorted(boxes.items())
    for i, (a, box_a) in enumerate(ordered):
        for b, box_b in ordered[i + 1:]:
            if box_a.inflate(1).x_max > box_b.x_min and box_b.inflate(1).x_max > box_a.x_min \
                    and box_a.inflate(1).y_max > box_b.y_min and box_b.inflate(1).y_max > box_a.y_min:
                raise InfeasibleLayout(f"symbols {a} and {b} overlap")
    for run in spec.runs:
        if len(run) < 2:
            raise InfeasibleLayout("a run needs at least two points")
        for x, y in run:
            if not (0 <= x < spec.width and 0 <= y < spec.height):
                raise InfeasibleLayout(f"run point ({x}, {y}) leaves the canvas")
    for c in spec.connections:
        for sid in (c.a, c.b):
            if sid not in boxes:
                raise InfeasibleLayout(f"connection references unknown symbol {sid!r}")
        if c.a == c.b:
            raise InfeasibleLayout(f"self-connection on {c.a}")


def render(spec: LayoutSpec) -> np.ndarray:
    canvas = np.full((spec.height, spec.width), PAPER, np.uint8)
    for run in spec.runs:
        pts = np.array(run, np.int32)
        cv2.polylines(canvas, [pts], False, INK, spec.stroke, cv2.LINE_8)
    for sym in spec.symbols:
        box = spec.box(sym)
        x0, y0 = int(box.x_min), int(box.y_min)
        canvas[y0:y0 + spec.symbol_size, x0:x0 + spec.symbol_size] = PAPER
        draw_glyph(canvas, sym.cls, x0, y0, spec.symbol_size, spec.stroke)
    return canvas


def _skew(pixels: np.ndarray, boxes: list[BoundingBox], degrees: float) -> tuple[np.ndarray, list[BoundingBox]]:
    h, w = pixels.shape
    matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), degrees, 1.0)
    warped = cv2.warpAffine(pixels, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                            borderValue=PAPER)
    moved = []
    for b in boxes:
        corners = np.array([[b.x_min, b.y_min, 1], [b.x_max, b.y_min, 1], [b.x_min, b.y_max, 1],
                            [b.x_max, b.y_max, 1]], dtype=np.float64)
        pts = corners @ matrix.T
        x0, y0 = max(0.0, float(pts[:, 0].min())), max(0.0, float(pts[:, 1].min()))
        x1, y1 = min(float(w), float(pts[:, 0].max())), min(float(h), float(pts[:, 1].max()))
        moved.append(BoundingBox(round(x0, 3), round(y0, 3), round(x1, 3), round(y1, 3)))
    return warped, moved


def generate_synthetic_plan(spec: LayoutSpec, seed: int = 0, perturb: Perturbation | None = None) -> SyntheticPlan:
    """Render a layout; the seed drives the optional perturbation noise only."""
    check_layout(spec)
    pixels = render(spec)
    boxes = [spec.box(s) for s in spec.symbols]
    if perturb is not None:
        rng = np.random.default_rng(seed)
        if perturb.skew_deg:
            pixels, boxes = _skew(pixels, boxes, perturb.skew_deg)
        if perturb.noise_sigma > 0:
            noise = rng.normal(0.0, perturb.noise_sigma, pixels.shape)
            pixels = np.clip(np.rint(pixels.astype(np.float64) + noise), 0, 255).astype(np.uint8)
    truth = tuple(
        SymbolDetection(id=s.id, cls=s.cls, bbox=box, score=1.0)
        for s, box in zip(spec.symbols, boxes, strict=True)
    )
    ids = [s.id for s in spec.symbols]
    matrix = ConnectionMatrix.from_edges(ids, [(c.a, c.b) for c in spec.connections])
    kinds = {(min(c.a, c.b), max(c.a, c.b)): c.kind for c in spec.connections}
    return SyntheticPlan(
        image=plan_from_array(pixels, source_id=spec.name),
        truth_symbols=truth,
        truth_matrix=matrix,
        layout=spec,
        path_kinds=kinds,
    )


# ---------------------------------------------------------------------------
# Layout families
# ---------------------------------------------------------------------------
def sample_layout(name: str = "sample") -> LayoutSpec:
    """Valve-1 above a three-way junction, Valve-2 and Flap-3 below it, Pump-4 on the branch."""
    symbols = (
        SymbolSpec("Valve-1", "Valve", (100, 60)),
        SymbolSpec("Valve-2", "Valve", (100, 260)),
        SymbolSpec("Flap-3", "Flap", (100, 360)),
        SymbolSpec("Pump-4", "Pump", (260, 160)),
    )
    runs = (((100, 60), (100, 360)), ((100, 160), (260, 160)))
    connections = (
        Connection("Valve-1", "Valve-2", "junction"),
        Connection("Pump-4", "Valve-1", "junction"),
        Connection("Pump-4", "Valve-2", "junction"),
        Connection("Flap-3", "Valve-2", "direct"),
    )
    return LayoutSpec(width=360, height=420, symbols=symbols, runs=runs, connections=connections, name=name)


def junction_layout(directions: int, name: str | None = None) -> LayoutSpec:
    """Two symbols on an L (2), three on a T (3), or two runs crossing over each other (4)."""
    if directions == 2:
        symbols = (SymbolSpec("Valve-1", "Valve", (40, 40)), SymbolSpec("Pump-2", "Pump", (160, 160)))
        runs = (((40, 40), (160, 40), (160, 160)),)
        connections = (Connection("Pump-2", "Valve-1", "corner"),)
    elif directions == 3:
        symbols = (SymbolSpec("Valve-1", "Valve", (30, 60)), SymbolSpec("Valve-2", "Valve", (170, 60)),
                   SymbolSpec("Pump-3", "Pump", (100, 170)))
        runs = (((30, 60), (170, 60)), ((100, 60), (100, 170)))
        connections = (Connection("Valve-1", "Valve-2", "junction"), Connection("Pump-3", "Valve-1", "junction"),
                       Connection("Pump-3", "Valve-2", "junction"))
    elif directions == 4:
        symbols = (SymbolSpec("Valve-1", "Valve", (30, 100)), SymbolSpec("Valve-2", "Valve", (170, 100)),
                   SymbolSpec("Pump-3", "Pump", (100, 30)), SymbolSpec("Pump-4", "Pump", (100, 170)))
        runs = (((30, 100), (170, 100)), ((100, 30), (100, 170)))
        connections = (Connection("Valve-1", "Valve-2", "direct"), Connection("Pump-3", "Pump-4", "direct"))
    else:
        raise InfeasibleLayout(f"no junction fixture with {directions} directions")
    return LayoutSpec(width=CELL, height=CELL, symbols=symbols, runs=runs, connections=connections,
                      name=name or f"junction-{directions}")


# motif coordinates inside a CELL×CELL square; ids are placeholders renumbered per plan
_MOTIFS: dict[str, tuple[list[tuple[int, int]], list[list[tuple[int, int]]], list[tuple[int, int, str]]]] = {
    "straight": ([(40, 100), (160, 100)], [[(40, 100), (160, 100)]], [(0, 1, "direct")]),
    "corner": ([(40, 40), (160, 160)], [[(40, 40), (160, 40), (160, 160)]], [(0, 1, "corner")]),
    "tee": (
        [(30, 60), (170, 60), (100, 170)],
        [[(30, 60), (170, 60)], [(100, 60), (100, 170)]],
        [(0, 1, "junction"), (0, 2, "junction"), (1, 2, "junction")],
    ),
    "chain": (
        [(30, 100), (100, 100), (170, 100)],
        [[(30, 100), (170, 100)]],
        [(0, 1, "direct"), (1, 2, "direct")],
    ),
}


def _transform(p: tuple[int, int], k: int) -> tuple[int, int]:
    """One of the eight symmetries of the cell square."""
    x, y = p
    hi = CELL - 1
    for _ in range(k % 4):
        x, y = hi - y, x
    if k >= 4:
        x = hi - x
    return x, y


def random_layout(seed: int, n_symbols: int | None = None, classes: Sequence[str] = DEFAULT_CLASSES) -> LayoutSpec:
    """Disjoint straight / corner / tee / chain motifs, one per grid cell, 2–12 symbols."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13)) if n_symbols is None else n_symbols
    if not 2 <= n <= 12:
        raise InfeasibleLayout(f"random layouts hold 2..12 symbols, got {n}")
    motifs: list[str] = []
    remaining = n
    while remaining:
        if remaining in (2, 4):
            motifs.append(str(rng.choice(["straight", "corner"])))
        elif remaining == 3:
            motifs.append(str(rng.choice(["tee", "chain"])))
        else:
            motifs.append(str(rng.choice(["straight", "corner", "tee", "chain"])))
        remaining -= len(_MOTIFS[motifs[-1]][0])
    cols = math.ceil(math.sqrt(len(motifs)))
    rows = math.ceil(len(motifs) / cols)

    placed: list[tuple[str, tuple[int, int]]] = []
    runs: list[tuple[tuple[int, int], ...]] = []
    links: list[tuple[int, int, str]] = []
    for i, motif in enumerate(motifs):
        ox, oy = (i % cols) * CELL, (i // cols) * CELL
        k = int(rng.integers(0, 8))
        centers, polylines, edges = _MOTIFS[motif]
        base = len(placed)
        for c in centers:
            x, y = _transform(c, k)
            placed.append((str(rng.choice(list(classes))), (ox + x, oy + y)))
        for line in polylines:
            runs.append(tuple((ox + x, oy + y) for x, y in (_transform(p, k) for p in line)))
        links.extend((base + a, base + b, kind) for a, b, kind in edges)

    order = sorted(range(len(placed)), key=lambda j: (placed[j][1][1], placed[j][1][0]))
    ids = {j: f"{placed[j][0]}-{rank}" for rank, j in enumerate(order, start=1)}
    symbols = tuple(SymbolSpec(ids[j], placed[j][0], placed[j][1]) for j in order)
    connections = tuple(Connection(min(ids[a], ids[b]), max(ids[a], ids[b]), kind) for a, b, kind in links)
    return LayoutSpec(width=cols * CELL, height=rows * CELL, symbols=symbols, runs=tuple(runs),
                      connections=connections, name=f"synth-{seed:04d}")


# ---------------------------------------------------------------------------
# Fixture files
# ---------------------------------------------------------------------------
def write_png(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp"
    Image.fromarray(np.array(pixels, dtype=np.uint8)).save(tmp, format="PNG")
    tmp.replace(path)


def write_fixture(plan: SyntheticPlan, directory: Path) -> dict[str, Path]:
    """plans/<name>.png, annotations/<name>.json and truth/<name>.json under directory."""
    directory = Path(directory)
    name = plan.layout.name
    paths = {
        "plan": directory / "plans" / f"{name}.png",
        "annotations": directory / "annotations" / f"{name}.json",
        "truth": directory / "truth" / f"{name}.json",
    }
    write_png(paths["plan"], plan.image.pixels)
    write_text_atomic(paths["annotations"], serialize_annotations(name, plan.truth_symbols))
    kinds = {f"{a}|{b}": kind for (a, b), kind in sorted(plan.path_kinds.items())}
    graph = matrix_to_graph(plan.truth_matrix, plan.truth_symbols, {"plan": name, "path_kinds": kinds})
    write_text_atomic(paths["truth"], export_json(graph))
    log.info("fixture %s: %d symbol(s), %d connection(s)", name, len(plan.truth_symbols),
             len(plan.truth_matrix.edges()))
    return paths
