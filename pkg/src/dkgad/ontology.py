"""Microservice ontology: entity categories, hierarchy relations and attributes."""

from __future__ import annotations

from dataclasses import dataclass, field

K8S = "http://dkg.example.org/k8s#"
RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD = "http://www.w3.org/2001/XMLSchema#"
RDF_TYPE = RDF + "type"

# literal kinds an attribute may declare
INTEGER = "integer"
DECIMAL = "decimal"
BOOLEAN = "boolean"
TEXT = "text"
NUMERIC_KINDS = frozenset({INTEGER, DECIMAL, BOOLEAN})


@dataclass(frozen=True)
class Relation:
    """A hierarchy edge predicate: ``domain --predicate--> range``.

    ``child`` names which end sits lower in the containment tree; the
    hierarchy index is always stored from the lower category towards the
    root (Service -> Connection -> Pod -> Node -> Cluster).
    """

    predicate: str
    domain: str
    range: str
    child: str

    @property
    def parent(self) -> str:
        return self.range if self.child == self.domain else self.domain


@dataclass(frozen=True)
class Attribute:
    predicate: str
    category: str
    name: str
    kind: str


@dataclass
class OntologySchema:
    categories: tuple[str, ...]
    relations: tuple[Relation, ...]
    attributes: tuple[Attribute, ...]
    namespace: str = K8S
    _by_predicate: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        seen: dict[str, object] = {}
        for rel in self.relations:
            for cat in (rel.domain, rel.range):
                if cat not in self.categories:
                    raise ValueError(f"relation {rel.predicate} references unknown category {cat}")
            if rel.child not in (rel.domain, rel.range):
                raise ValueError(f"relation {rel.predicate}: child must be domain or range")
            seen[rel.predicate] = rel
        for attr in self.attributes:
            if attr.category not in self.categories:
                raise ValueError(f"attribute {attr.predicate} references unknown category {attr.category}")
            if attr.predicate in seen:
                raise ValueError(f"predicate {attr.predicate} declared twice")
            seen[attr.predicate] = attr
        self._by_predicate = seen
        self._check_tree()

    def _check_tree(self) -> None:
        # union-find over categories: a repeated merge means a cycle
        parent = {c: c for c in self.categories}

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        for rel in self.relations:
            a, b = find(rel.domain), find(rel.range)
            if a == b:
                raise ValueError(f"relation set has a cycle through {rel.predicate}")
            parent[a] = b

    def lookup(self, predicate: str) -> Relation | Attribute | None:
        return self._by_predicate.get(predicate)

    def category_iri(self, category: str) -> str:
        return self.namespace + category

    def category_of_class(self, iri: str) -> str | None:
        if iri.startswith(self.namespace):
            name = iri[len(self.namespace):]
            if name in self.categories:
                return name
        return None

    def attributes_of(self, category: str) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.category == category)

    def parent_relation(self, category: str) -> Relation | None:
        """The relation leading one level up the hierarchy from ``category``."""
        for rel in self.relations:
            if rel.child == category:
                return rel
        return None

    def hierarchy_path(self, category: str, max_hops: int = 3) -> tuple[str, ...]:
        """Categories visited when aggregating from ``category`` towards the root."""
        path = []
        cat = category
        while len(path) < max_hops:
            rel = self.parent_relation(cat)
            if rel is None:
                break
            cat = rel.parent
            path.append(cat)
        return tuple(path)


def microservice_schema(namespace: str = K8S) -> OntologySchema:
    """The default Kubernetes-style schema used by the generator and the pipeline."""
    ns = namespace
    relations = (
        Relation(ns + "contains", "Cluster", "Node", child="Node"),
        Relation(ns + "hosts", "Node", "Pod", child="Pod"),
        Relation(ns + "source", "Connection", "Pod", child="Connection"),
        Relation(ns + "target", "Connection", "Service", child="Service"),
    )
    attrs = [
        ("Cluster", "api_latency", DECIMAL),
        ("Node", "cpu", DECIMAL),
        ("Node", "memory", DECIMAL),
        ("Pod", "cpu", DECIMAL),
        ("Pod", "memory", DECIMAL),
        ("Pod", "restarts", INTEGER),
        ("Pod", "ready", BOOLEAN),
        ("Connection", "request_rate", DECIMAL),
        ("Connection", "error_rate", DECIMAL),
        ("Service", "request_rate", DECIMAL),
        ("Service", "latency", DECIMAL),
    ]
    attributes = tuple(
        Attribute(f"{ns}{cat.lower()}_{name}", cat, name, kind) for cat, name, kind in attrs
    )
    return OntologySchema(
        categories=("Cluster", "Node", "Pod", "Connection", "Service"),
        relations=relations,
        attributes=attributes,
        namespace=ns,
    )
