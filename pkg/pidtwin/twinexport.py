"""Digital-twin skeleton exports: Topology JSON, Brick-style Turtle, BUDO-style label table."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import string
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from rdflib import RDF, RDFS, Graph, Literal, Namespace, URIRef

from .config import BRICK_NS, BUDO_FIELDS, DEFAULT_CLASS_MAP, brick_iri
from .errors import SchemaViolation, TemplateFieldUnknown, UnmappedClass
from .plancore import BoundingBox
from .util import dumps_json, slugify

log = logging.getLogger("pidtwin.twinexport")

DEFAULT_BUDO_TEMPLATE = "{building}_{system}_{class_code}_{ordinal}"
DEFAULT_PREDICATE = "urn:pidtwin:vocab#connectedTo"
DEFAULT_BASE_IRI = "urn:pidtwin:"

_TRAILING_NUMBER = re.compile(r"(\d+)$")


@dataclass(frozen=True)
class TopologyNode:
    id: str
    cls: str
    bbox: BoundingBox

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "class": self.cls, "bbox": self.bbox.as_list()}


@dataclass(frozen=True)
class TopologyGraph:
    """Symbols as typed nodes, connections as unordered id pairs (smaller id first)."""

    nodes: tuple[TopologyNode, ...]
    edges: tuple[tuple[str, str], ...]
    plan_meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        seen = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if a not in known or b not in known:
                raise ValueError(f"edge {a}-{b} references an unknown node")
            if a > b:
                raise ValueError(f"edge {a}-{b} not in canonical order")
            if (a, b) in seen:
                raise ValueError(f"duplicate edge {a}-{b}")
            seen.add((a, b))

    @classmethod
    def build(cls, nodes: Iterable[TopologyNode], edges: Iterable[tuple[str, str]],
              plan_meta: Mapping[str, Any] | None = None) -> TopologyGraph:
        pairs = sorted({(min(a, b), max(a, b)) for a, b in edges})
        return cls(nodes=tuple(sorted(nodes, key=lambda n: n.id)), edges=tuple(pairs),
                   plan_meta=dict(plan_meta or {}))

    @property
    def plan(self) -> str:
        return str(self.plan_meta.get("plan", ""))

    def node(self, node_id: str) -> TopologyNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


@dataclass(frozen=True)
class ClassMapping:
    brick: Mapping[str, str]
    budo: Mapping[str, str]

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> ClassMapping:
        table = cfg.get("export", {}).get("class_map", DEFAULT_CLASS_MAP)
        return cls(
            brick={name: brick_iri(entry["brick"]) for name, entry in table.items()},
            budo={name: entry["budo"] for name, entry in table.items()},
        )

    @classmethod
    def default(cls) -> ClassMapping:
        return cls.from_config({})

    def check(self, g: TopologyGraph) -> None:
        missing = sorted({n.cls for n in g.nodes if n.cls not in self.brick or n.cls not in self.budo})
        if missing:
            raise UnmappedClass(f"no Brick/BUDO mapping for class(es) {missing}")


# ---------------------------------------------------------------------------
# Topology JSON
# ---------------------------------------------------------------------------
def topology_to_dict(g: TopologyGraph) -> dict[str, Any]:
    meta = {k: v for k, v in g.plan_meta.items() if k != "plan"}
    return {
        "plan": g.plan,
        "meta": meta,
        "nodes": [n.to_json() for n in sorted(g.nodes, key=lambda n: n.id)],
        "edges": [list(e) for e in sorted(g.edges)],
    }


def export_json(g: TopologyGraph) -> str:
    return dumps_json(topology_to_dict(g))


def parse_json(text: str, source: str = "<topology>") -> TopologyGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("plan"), str):
        raise SchemaViolation(f"{source}: plan: expected a string")
    nodes_raw, edges_raw = data.get("nodes"), data.get("edges")
    if not isinstance(nodes_raw, list):
        raise SchemaViolation(f"{source}: nodes: expected a list")
    if not isinstance(edges_raw, list):
        raise SchemaViolation(f"{source}: edges: expected a list")
    meta = data.get("meta", {})
    if not isinstance(meta, dict):
        raise SchemaViolation(f"{source}: meta: expected an object")
    nodes = []
    for i, item in enumerate(nodes_raw):
        try:
            nodes.append(TopologyNode(id=str(item["id"]), cls=str(item["class"]),
                                      bbox=BoundingBox.from_list(item["bbox"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{source}: nodes[{i}]: {exc}") from exc
    edges = []
    for i, item in enumerate(edges_raw):
        if not isinstance(item, list) or len(item) != 2 or not all(isinstance(v, str) for v in item):
            raise SchemaViolation(f"{source}: edges[{i}]: expected a pair of node ids")
        edges.append((item[0], item[1]))
    try:
        return TopologyGraph.build(nodes, edges, {"plan": data["plan"], **meta})
    except ValueError as exc:
        raise SchemaViolation(f"{source}: {exc}") from exc


def read_topology(path: Path) -> TopologyGraph:
    path = Path(path)
    return parse_json(path.read_text(encoding="utf-8"), source=str(path))


# ---------------------------------------------------------------------------
# Turtle
# ---------------------------------------------------------------------------
def node_iri(base_iri: str, plan: str, node_id: str) -> URIRef:
    return URIRef(f"{base_iri}{slugify(plan) or 'plan'}/{node_id}")


def _vocab_namespace(predicate_iri: str) -> str | None:
    for sep in ("#", "/"):
        if sep in predicate_iri:
            return predicate_iri.rsplit(sep, 1)[0] + sep
    return None


def build_rdf(g: TopologyGraph, mapping: ClassMapping, predicate_iri: str = DEFAULT_PREDICATE,
              base_iri: str = DEFAULT_BASE_IRI, labels: Mapping[str, str] | None = None) -> Graph:
    mapping.check(g)
    rdf = Graph()
    rdf.bind("brick", Namespace(BRICK_NS))
    rdf.bind("rdf", RDF)
    rdf.bind("rdfs", RDFS)
    rdf.bind("twin", Namespace(f"{base_iri}{slugify(g.plan) or 'plan'}/"))
    vocab = _vocab_namespace(predicate_iri)
    if vocab:
        rdf.bind("vocab", Namespace(vocab))
    for n in g.nodes:
        subject = node_iri(base_iri, g.plan, n.id)
        rdf.add((subject, RDF.type, URIRef(mapping.brick[n.cls])))
        rdf.add((subject, RDFS.label, Literal(labels.get(n.id, n.id) if labels else n.id)))
    predicate = URIRef(predicate_iri)
    for a, b in g.edges:
        rdf.add((node_iri(base_iri, g.plan, a), predicate, node_iri(base_iri, g.plan, b)))
    return rdf


def export_turtle(g: TopologyGraph, mapping: ClassMapping | None = None, predicate_iri: str = DEFAULT_PREDICATE,
                  base_iri: str = DEFAULT_BASE_IRI, labels: Mapping[str, str] | None = None) -> str:
    """Turtle document; rdflib orders subjects and predicates, so equal graphs give equal text."""
    rdf = build_rdf(g, mapping or ClassMapping.default(), predicate_iri, base_iri, labels)
    text = rdf.serialize(format="turtle")
    return text if text.endswith("\n") else text + "\n"


# ---------------------------------------------------------------------------
# BUDO labels
# ---------------------------------------------------------------------------
def check_budo_template(template: str) -> None:
    try:
        fields = {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}
    except ValueError as exc:
        raise TemplateFieldUnknown(f"malformed label template {template!r}: {exc}") from exc
    unknown = sorted(fields - BUDO_FIELDS)
    if unknown or "" in fields:
        raise TemplateFieldUnknown(f"label template {template!r}: unknown field(s) {unknown or ['{}']}; "
                                   f"known: {sorted(BUDO_FIELDS)}")


def budo_labels(g: TopologyGraph, mapping: ClassMapping | None = None, template: str = DEFAULT_BUDO_TEMPLATE,
                building: str = "B1", system: str = "H") -> dict[str, str]:
    """Unique label per node id; collisions get a '_<n>' suffix."""
    mapping = mapping or ClassMapping.default()
    check_budo_template(template)
    mapping.check(g)
    counters: dict[str, int] = {}
    taken: set[str] = set()
    labels: dict[str, str] = {}
    for n in sorted(g.nodes, key=lambda n: n.id):
        m = _TRAILING_NUMBER.search(n.id)
        if m:
            ordinal = int(m.group(1))
        else:
            counters[n.cls] = counters.get(n.cls, 0) + 1
            ordinal = counters[n.cls]
        label = template.format(building=building, system=system, class_code=mapping.budo[n.cls],
                                ordinal=ordinal)
        if label in taken:
            k = 2
            while f"{label}_{k}" in taken:
                k += 1
            log.warning("label %s already used — %s labelled %s_%d", label, n.id, label, k)
            label = f"{label}_{k}"
        taken.add(label)
        labels[n.id] = label
    return labels


def export_budo(g: TopologyGraph, mapping: ClassMapping | None = None, template: str = DEFAULT_BUDO_TEMPLATE,
                building: str = "B1", system: str = "H") -> str:
    labels = budo_labels(g, mapping, template, building, system)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label", "class"])
    for n in sorted(g.nodes, key=lambda n: n.id):
        writer.writerow([n.id, labels[n.id], n.cls])
    return buf.getvalue()

