"""Debug overlay: one SVG layering the plan raster, segments, crossings, symbol boxes and derived edges."""

from __future__ import annotations

import base64
import io
import logging
from collections.abc import Sequence
from html import escape

import numpy as np
from PIL import Image

from .crossings import LineCrossing
from .linedetect import LineSegment
from .plancore import PlanImage
from .twinexport import TopologyGraph

log = logging.getLogger("pidtwin.overlay")

SVG_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<title>{title}</title>
<style>
 .segment{{stroke:#2563eb;stroke-width:1.5;opacity:.8}}
 .crossing.connective{{fill:#16a34a}}.crossing.blocking{{fill:#dc2626}}
 .symbol{{fill:none;stroke:#f59e0b;stroke-width:1.5}}
 .edge{{stroke:#9333ea;stroke-width:2;stroke-dasharray:6 3;fill:none}}
 text{{font:10px sans-serif;fill:#111}}
</style>
<image x="0" y="0" width="{width}" height="{height}" href="data:image/png;base64,{raster}"/>
<g id="segments">
{segments}</g>
<g id="crossings">
{crossings}</g>
<g id="symbols">
{symbols}</g>
<g id="edges">
{edges}</g>
</svg>
"""


def _n(v: float) -> str:
    return f"{v:.2f}"


def png_base64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.array(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def build_overlay_svg(
    plan: PlanImage,
    segs: Sequence[LineSegment],
    crossings: Sequence[LineCrossing],
    graph: TopologyGraph,
) -> str:
    segments = "".join(
        f'<line class="segment" data-id="{escape(s.id)}" x1="{_n(s.p1.x)}" y1="{_n(s.p1.y)}" '
        f'x2="{_n(s.p2.x)}" y2="{_n(s.p2.y)}"/>\n'
        for s in sorted(segs, key=lambda s: s.id)
    )
    marks = "".join(
        f'<circle class="crossing {"connective" if c.connective else "blocking"}" data-id="{escape(c.id)}" '
        f'data-degree="{c.degree}" cx="{_n(c.at.x)}" cy="{_n(c.at.y)}" r="4"/>\n'
        for c in crossings
    )
    boxes = "".join(
        f'<rect class="symbol" data-id="{escape(n.id)}" data-class="{escape(n.cls)}" x="{_n(n.bbox.x_min)}" '
        f'y="{_n(n.bbox.y_min)}" width="{_n(n.bbox.width)}" height="{_n(n.bbox.height)}"/>'
        f'<text x="{_n(n.bbox.x_min)}" y="{_n(max(0.0, n.bbox.y_min - 2))}">{escape(n.id)}</text>\n'
        for n in graph.nodes
    )
    centers = {n.id: n.bbox.center for n in graph.nodes}
    edges = "".join(
        f'<path class="edge" data-a="{escape(a)}" data-b="{escape(b)}" '
        f'd="M {_n(centers[a].x)} {_n(centers[a].y)} L {_n(centers[b].x)} {_n(centers[b].y)}"/>\n'
        for a, b in graph.edges
    )
    return SVG_TEMPLATE.format(
        width=plan.width,
        height=plan.height,
        title=escape(plan.source_id),
        raster=png_base64(plan.pixels),
        segments=segments,
        crossings=marks,
        symbols=boxes,
        edges=edges,
    )
