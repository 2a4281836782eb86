"""Plan rasters, geometry primitives and tiling with lossless coordinate mapping.

Large plans are cut into overlapping tiles for symbol detection; every tile
keeps its offset so local results can be composed back onto the whole plan.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidTiling, OutOfTile, UnreadableFile, UnsupportedFormat

log = logging.getLogger("pidtwin.plancore")

SUPPORTED_FORMATS = {"PNG", "JPEG"}
# ITU-R BT.601
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DEFAULT_TILE_SIZE = 800
DEFAULT_OVERLAP = 100


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def translated(self, dx: float, dy: float) -> Point:
        return Point(self.x + dx, self.y + dy)

    def distance(self, other: Point) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_list(self) -> list[float]:
        return [self.x, self.y]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates; max edges are exclusive for area purposes."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"inverted box {self.as_list()}")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError(f"negative box coordinates {self.as_list()}")

    @classmethod
    def from_list(cls, values) -> BoundingBox:
        x0, y0, x1, y1 = (float(v) for v in values)
        return cls(x0, y0, x1, y1)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def inflate(self, px: float) -> BoundingBox:
        """Grow by px on every side, clamped at zero."""
        return BoundingBox(
            max(0.0, self.x_min - px), max(0.0, self.y_min - px), self.x_max + px, self.y_max + px
        )

    def translate(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def within(self, width: float, height: float) -> bool:
        return self.x_max <= width and self.y_max <= height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def sort_key(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint or degenerate."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True, eq=False)
class PlanImage:
    """Grayscale 8-bit plan raster, row-major (height × width). Read-only."""

    width: int
    height: int
    pixels: np.ndarray
    source_id: str

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"empty plan {self.width}×{self.height}")
        if self.pixels.shape != (self.height, self.width) or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8 {self.height}×{self.width}, got {self.pixels.dtype} "
                             f"{self.pixels.shape}")
        self.pixels.flags.writeable = False


@dataclass(frozen=True, eq=False)
class Tile:
    image: PlanImage
    offset_x: int
    offset_y: int
    index: tuple[int, int]

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


def plan_from_array(array: np.ndarray, source_id: str) -> PlanImage:
    pixels = np.ascontiguousarray(np.clip(array, 0, 255).astype(np.uint8))
    return PlanImage(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels, source_id=source_id)


def _to_luminance(img: Image.Image) -> np.ndarray:
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8).copy()
    if img.mode in ("1", "I;16", "I", "F"):
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()
    if img.mode in ("RGBA", "LA", "PA") or (img.mode == "P" and "transparency" in img.info):
        rgba = img.convert("RGBA")
        white = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        img = Image.alpha_composite(white, rgba)
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    return np.rint(rgb @ LUMA_WEIGHTS).clip(0, 255).astype(np.uint8)


def load_plan(path: Path, dpi_hint: int | None = None) -> PlanImage:
    """Load a PNG/JPEG plan as grayscale. PDF plans must be rasterized beforehand."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            head = fh.read(5)
    except OSError as exc:
        raise UnreadableFile(f"{path}: cannot read plan ({exc.strerror or exc})") from exc
    if head.startswith(b"%PDF"):
        raise UnsupportedFormat(
            f"{path}: PDF plans are not read directly; rasterize the page to PNG first "
            "(e.g. `pdftoppm -png -r 300 plan.pdf plan`)"
        )
    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise UnsupportedFormat(f"{path}: unsupported format {img.format}; expected PNG or JPEG")
            img.load()
            pixels = _to_luminance(img)
    except UnidentifiedImageError as exc:
        raise UnreadableFile(f"{path}: not a decodable image") from exc
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    plan = plan_from_array(pixels, source_id=path.stem)
    log.info("loaded %s (%d×%d px%s)", path.name, plan.width, plan.height,
             f", {dpi_hint} dpi" if dpi_hint else "")
    return plan


def _axis_offsets(extent: int, tile_size: int, overlap: int) -> list[int]:
    if extent <= tile_size:
        return [0]
    stride = tile_size - overlap
    offsets = []
    pos = 0
    while pos + tile_size < extent:
        offsets.append(pos)
        pos += stride
    offsets.append(extent - tile_size)  # last tile clamped to the plan edge
    return offsets


def decompose(plan: PlanImage, tile_size: int = DEFAULT_TILE_SIZE, overlap: int = DEFAULT_OVERLAP) -> list[Tile]:
    """Cut the plan into overlapping tiles, row-major, indices dense."""
    if overlap < 0 or tile_size <= 2 * overlap:
        raise InvalidTiling(f"tile_size={tile_size} must exceed 2 × overlap={overlap}")
    xs = _axis_offsets(plan.width, tile_size, overlap)
    ys = _axis_offsets(plan.height, tile_size, overlap)
    tiles = []
    for row, oy in enumerate(ys):
        for col, ox in enumerate(xs):
            h = min(tile_size, plan.height - oy)
            w = min(tile_size, plan.width - ox)
            sub = plan.pixels[oy:oy + h, ox:ox + w].copy()
            image = PlanImage(width=w, height=h, pixels=sub, source_id=f"{plan.source_id}@r{row}c{col}")
            tiles.append(Tile(image=image, offset_x=ox, offset_y=oy, index=(row, col)))
    log.debug("decomposed %s into %d tile(s) (%d×%d grid)", plan.source_id, len(tiles), len(ys), len(xs))
    return tiles


def to_plan_coords(tile: Tile, local: BoundingBox) -> BoundingBox:
    if not local.within(tile.width, tile.height):
        raise OutOfTile(f"box {local.as_list()} exceeds tile {tile.index} ({tile.width}×{tile.height})")
    return local.translate(tile.offset_x, tile.offset_y)


def to_tile_coords(tile: Tile, box: BoundingBox) -> BoundingBox:
    x0, y0 = box.x_min - tile.offset_x, box.y_min - tile.offset_y
    x1, y1 = box.x_max - tile.offset_x, box.y_max - tile.offset_y
    if x0 < 0 or y0 < 0 or x1 > tile.width or y1 > tile.height:
        raise OutOfTile(f"box {box.as_list()} lies outside tile {tile.index}")
    return BoundingBox(x0, y0, x1, y1)
