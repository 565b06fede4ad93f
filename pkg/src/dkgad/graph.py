"""Discrete-time dynamic knowledge graph assembled from timestamped quads."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ontology import RDF_TYPE, Attribute, OntologySchema, Relation
from .ttl import Literal, Quad

log = logging.getLogger(__name__)


class GraphBuildError(ValueError):
    pass


@dataclass
class EntityRegistry:
    """Per-category entity ordering, frozen once built.

    Entities appended after the registry was frozen (first seen in later data)
    are listed in ``late``; downstream features give them zero history.
    """

    entities: dict[str, list[str]]
    late: set[str] = field(default_factory=set)

    def __post_init__(self):
        self._index: dict[str, tuple[str, int]] = {}
        for cat, iris in self.entities.items():
            for i, iri in enumerate(iris):
                if iri in self._index:
                    raise GraphBuildError(f"{iri} registered under two categories")
                self._index[iri] = (cat, i)

    def lookup(self, iri: str) -> tuple[str, int]:
        try:
            return self._index[iri]
        except KeyError:
            raise KeyError(f"unknown entity {iri}") from None

    def __contains__(self, iri: str) -> bool:
        return iri in self._index

    def size(self, category: str) -> int:
        return len(self.entities.get(category, ()))

    def __len__(self) -> int:
        return len(self._index)


@dataclass
class CategoryTensor:
    category: str
    attributes: tuple[str, ...]
    values: np.ndarray    # N_k x T x d_k
    presence: np.ndarray  # N_k x T, bool


def relation_kind(rel: Relation) -> str:
    return f"{rel.child}->{rel.parent}"


@dataclass
class HierarchyIndex:
    """Upward hierarchy edges per snapshot, stored as sorted integer triples.

    ``edges[kind]`` is an ``E x 3`` array of ``(t_index, child_index,
    parent_index)`` rows where ``kind`` is e.g. ``"Service->Connection"``.
    """

    edges: dict[str, np.ndarray]
    n_timestamps: int

    def __post_init__(self):
        self._offsets = {
            kind: np.searchsorted(e[:, 0], np.arange(self.n_timestamps + 1)) for kind, e in self.edges.items()
        }
        self._maps: dict[tuple[str, int], dict[int, list[int]]] = {}

    def at(self, kind: str, t_index: int) -> np.ndarray:
        lo, hi = self._offsets[kind][t_index], self._offsets[kind][t_index + 1]
        return self.edges[kind][lo:hi, 1:]

    def adjacency(self, kind: str, t_index: int) -> dict[int, list[int]]:
        key = (kind, t_index)
        m = self._maps.get(key)
        if m is None:
            m = {}
            for child, parent in self.at(kind, t_index).tolist():
                m.setdefault(child, []).append(parent)
            if len(self._maps) > 200_000:
                self._maps.clear()
            self._maps[key] = m
        return m


@dataclass
class DynamicKnowledgeGraph:
    schema: OntologySchema
    timestamps: np.ndarray
    registry: EntityRegistry
    tensors: dict[str, CategoryTensor]
    hierarchy: HierarchyIndex
    warnings: list[str] = field(default_factory=list)

    @property
    def n_timestamps(self) -> int:
        return len(self.timestamps)

    def t_index(self, t: int) -> int:
        i = int(np.searchsorted(self.timestamps, t))
        if i >= len(self.timestamps) or self.timestamps[i] != t:
            raise KeyError(f"unknown timestamp {t}")
        return i

    def relation_kinds(self) -> tuple[str, ...]:
        return tuple(relation_kind(r) for r in self.schema.relations)

    def kind_between(self, child: str, parent: str) -> str:
        kind = f"{child}->{parent}"
        if kind not in self.hierarchy.edges:
            raise KeyError(f"no hierarchy relation {kind}")
        return kind


def build_graph(
    quads: Iterable[Quad],
    schema: OntologySchema,
    base_registry: EntityRegistry | None = None,
) -> DynamicKnowledgeGraph:
    """Assemble validated quads into registry, attribute tensors and hierarchy."""
    quads = list(quads)
    if not quads:
        raise GraphBuildError("no quads: at least one snapshot is required")

    timestamps = np.array(sorted({q.timestamp for q in quads}), dtype=np.int64)
    t_pos = {int(t): i for i, t in enumerate(timestamps)}

    category_of: dict[str, str] = {}
    for q in quads:
        if q.predicate == RDF_TYPE and not isinstance(q.object, Literal):
            cat = schema.category_of_class(q.object)
            if cat is None:
                continue
            prev = category_of.setdefault(q.subject, cat)
            if prev != cat:
                raise GraphBuildError(f"{q.subject} typed as both {prev} and {cat}")

    entities: dict[str, list[str]] = {c: [] for c in schema.categories}
    late: set[str] = set()
    if base_registry is not None:
        for cat in schema.categories:
            entities[cat] = list(base_registry.entities.get(cat, []))
        late = set(base_registry.late)
        known = set().union(*map(set, entities.values()))
        fresh = sorted(iri for iri in category_of if iri not in known)
        for iri in fresh:
            entities[category_of[iri]].append(iri)
        late.update(fresh)
    else:
        for iri, cat in category_of.items():
            entities[cat].append(iri)
        for cat in entities:
            entities[cat].sort()
    registry = EntityRegistry(entities, late)

    T = len(timestamps)
    tensors: dict[str, CategoryTensor] = {}
    attr_slot: dict[str, tuple[str, int]] = {}
    for cat in schema.categories:
        attrs = schema.attributes_of(cat)
        for j, a in enumerate(attrs):
            attr_slot[a.predicate] = (cat, j)
        n = registry.size(cat)
        tensors[cat] = CategoryTensor(
            cat,
            tuple(a.name for a in attrs),
            np.zeros((n, T, len(attrs))),
            np.zeros((n, T), dtype=bool),
        )

    edge_lists: dict[str, list[tuple[int, int, int]]] = {relation_kind(r): [] for r in schema.relations}
    lookup = registry._index
    for q in quads:
        ti = t_pos[q.timestamp]
        pred = q.predicate
        if pred == RDF_TYPE:
            entry = lookup.get(q.subject)
            if entry is not None:
                tensors[entry[0]].presence[entry[1], ti] = True
            continue
        slot = attr_slot.get(pred)
        if slot is not None:
            entry = lookup.get(q.subject)
            if entry is None:
                raise GraphBuildError(f"attribute quad for unregistered entity {q.subject}")
            obj = q.object
            if not isinstance(obj, Literal):
                raise GraphBuildError(f"non-literal value for attribute <{pred}> of {q.subject}")
            try:
                value = obj.value
                value = float(value)
            except (TypeError, ValueError):
                raise GraphBuildError(f"non-numeric literal {obj.lexical!r} for <{pred}> of {q.subject}") from None
            cat, j = slot
            if entry[0] != cat:
                raise GraphBuildError(f"attribute <{pred}> on {entry[0]} entity {q.subject}")
            tensors[cat].values[entry[1], ti, j] = value
            continue
        decl = schema.lookup(pred)
        if isinstance(decl, Relation):
            s = lookup.get(q.subject)
            o = lookup.get(q.object) if isinstance(q.object, str) else None
            if s is None or o is None:
                raise GraphBuildError(f"relation quad references unregistered entity: {q.subject} -> {q.object}")
            if decl.child == decl.domain:
                edge_lists[relation_kind(decl)].append((ti, s[1], o[1]))
            else:
                edge_lists[relation_kind(decl)].append((ti, o[1], s[1]))

    edges = {}
    for kind, lst in edge_lists.items():
        arr = np.array(sorted(set(lst)), dtype=np.int64).reshape(-1, 3)
        edges[kind] = arr
    hierarchy = HierarchyIndex(edges, T)

    # absent cells stay zero even if a stray attribute quad set them
    for tensor in tensors.values():
        tensor.values[~tensor.presence] = 0.0

    warnings = []
    for rel in schema.relations:
        kind = relation_kind(rel)
        e = edges[kind]
        if len(e) == 0:
            continue
        ok = tensors[rel.child].presence[e[:, 1], e[:, 0]] & tensors[rel.parent].presence[e[:, 2], e[:, 0]]
        if not ok.all():
            warnings.append(f"{int((~ok).sum())} dangling {kind} edge(s) reference absent entities")
    for w in warnings:
        log.warning(w)
    return DynamicKnowledgeGraph(schema, timestamps, registry, tensors, hierarchy, warnings)


def neighbors(graph: DynamicKnowledgeGraph, entity: str, t: int, relation: str) -> set[str]:
    """IRIs related to ``entity`` at epoch ``t`` through ``relation``.

    ``relation`` is an upward kind such as ``"Service->Connection"``.
    """
    cat, idx = graph.registry.lookup(entity)
    ti = graph.t_index(t)
    if relation not in graph.hierarchy.edges:
        raise KeyError(f"unknown relation kind {relation}")
    child, parent = relation.split("->")
    if child != cat:
        return set()
    names = graph.registry.entities[parent]
    return {names[j] for j in graph.hierarchy.adjacency(relation, ti).get(idx, ())}


# ---------------------------------------------------------------------------
# binary cache
#
# layout (all integers little-endian):
#   magic    4 bytes  b"DKGC"
#   version  uint16   CACHE_VERSION
#   hdr_len  uint32   length of the UTF-8 JSON header that follows
#   header   JSON     schema, registry, and an ordered array table
#                     [{"name", "dtype", "shape"}]
#   arrays   raw C-ordered little-endian buffers, in table order

CACHE_MAGIC = b"DKGC"
CACHE_VERSION = 1


def save_graph(graph: DynamicKnowledgeGraph, path: str | Path) -> None:
    arrays: list[tuple[str, np.ndarray]] = [("timestamps", graph.timestamps.astype("<i8"))]
    for cat, tensor in graph.tensors.items():
        arrays.append((f"values/{cat}", tensor.values.astype("<f8")))
        arrays.append((f"presence/{cat}", tensor.presence.astype("u1")))
    for kind, e in graph.hierarchy.edges.items():
        arrays.append((f"edges/{kind}", e.astype("<i8")))
    header = {
        "schema": {
            "categories": list(graph.schema.categories),
            "relations": [asdict(r) for r in graph.schema.relations],
            "attributes": [asdict(a) for a in graph.schema.attributes],
            "namespace": graph.schema.namespace,
        },
        "registry": graph.registry.entities,
        "late": sorted(graph.registry.late),
        "warnings": graph.warnings,
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<HI", CACHE_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).tobytes())


def load_graph(path: str | Path) -> DynamicKnowledgeGraph:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a graph cache")
    version, hdr_len = struct.unpack_from("<HI", data, 4)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    offset = 10
    header = json.loads(data[offset:offset + hdr_len].decode("utf-8"))
    offset += hdr_len
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        a = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"])
        offset += count * dtype.itemsize
        arrays[spec["name"]] = a.copy()
    sch = header["schema"]
    schema = OntologySchema(
        categories=tuple(sch["categories"]),
        relations=tuple(Relation(**r) for r in sch["relations"]),
        attributes=tuple(Attribute(**a) for a in sch["attributes"]),
        namespace=sch["namespace"],
    )
    timestamps = arrays["timestamps"].astype(np.int64)
    registry = EntityRegistry({k: list(v) for k, v in header["registry"].items()}, set(header["late"]))
    tensors = {}
    for cat in schema.categories:
        tensors[cat] = CategoryTensor(
            cat,
            tuple(a.name for a in schema.attributes_of(cat)),
            arrays[f"values/{cat}"].astype(np.float64),
            arrays[f"presence/{cat}"].astype(bool),
        )
    edges = {relation_kind(r): arrays[f"edges/{relation_kind(r)}"].astype(np.int64) for r in schema.relations}
    return DynamicKnowledgeGraph(
        schema, timestamps, registry, tensors, HierarchyIndex(edges, len(timestamps)), list(header["warnings"])
    )


def load_snapshots(directory, schema: OntologySchema):
    """Scan, parse and validate a snapshot directory; returns (quads, report)."""
    from .ttl import parse_snapshot, scan_snapshot_dir, validate_quads

    quads: list[Quad] = []
    for snap in scan_snapshot_dir(directory):
        quads.extend(parse_snapshot(snap))
    report = validate_quads(quads, schema)
    return report.accepted, report
