from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkgad.graph import GraphBuildError, build_graph, load_graph, neighbors, save_graph
from dkgad.ontology import RDF_TYPE, microservice_schema
from dkgad.synth import ScenarioConfig, generate
from dkgad.ttl import XSD_DECIMAL, XSD_STRING, Literal, Quad

import oracles
from oracles import NS, random_quads

SCHEMA = microservice_schema()


def _graph(quads):
    return build_graph(quads, SCHEMA)


def _same_graph(a, b):
    assert np.array_equal(a.timestamps, b.timestamps)
    assert a.registry.entities == b.registry.entities
    for cat in a.tensors:
        assert np.array_equal(a.tensors[cat].values, b.tensors[cat].values)
        assert np.array_equal(a.tensors[cat].presence, b.tensors[cat].presence)
    for kind in a.hierarchy.edges:
        assert np.array_equal(a.hierarchy.edges[kind], b.hierarchy.edges[kind])


def test_single_pod_cpu():
    quads = [Quad(NS + "p", RDF_TYPE, NS + "Pod", 0), Quad(NS + "p", NS + "pod_cpu", Literal("2.0", XSD_DECIMAL), 0)]
    g = _graph(quads)
    pod = g.tensors["Pod"]
    assert pod.values.shape == (1, 1, len(SCHEMA.attributes_of("Pod")))
    assert pod.values[0, 0, pod.attributes.index("cpu")] == 2.0
    assert pod.presence.tolist() == [[True]]


def test_absent_snapshot_is_zero_filled():
    quads = [
        Quad(NS + "p", RDF_TYPE, NS + "Pod", 0), Quad(NS + "p", NS + "pod_cpu", Literal("2.0", XSD_DECIMAL), 0),
        Quad(NS + "q", RDF_TYPE, NS + "Pod", 15),
    ]
    g = _graph(quads)
    i = g.registry.lookup(NS + "p")[1]
    assert g.tensors["Pod"].presence[i].tolist() == [True, False]
    assert not g.tensors["Pod"].values[i, 1].any()


def test_errors():
    with pytest.raises(GraphBuildError):
        _graph([])
    with pytest.raises(GraphBuildError, match="unregistered"):
        _graph([Quad(NS + "p", NS + "pod_cpu", Literal("2.0", XSD_DECIMAL), 0)])
    with pytest.raises(GraphBuildError, match="non-numeric"):
        _graph([Quad(NS + "p", RDF_TYPE, NS + "Pod", 0), Quad(NS + "p", NS + "pod_cpu", Literal("high", XSD_STRING), 0)])


def test_registry_is_sorted_and_total():
    quads = random_quads(11)
    g = _graph(quads)
    for cat, iris in g.registry.entities.items():
        assert iris == sorted(iris) == oracles.typed(quads, cat)
    typed_subjects = {q.subject for q in quads if q.predicate == RDF_TYPE}
    assert len(g.registry) == len(typed_subjects)


def test_neighbors_small():
    t = 0
    quads = [Quad(NS + n, RDF_TYPE, NS + c, t) for n, c in
             (("s", "Service"), ("c1", "Connection"), ("c2", "Connection"), ("p", "Pod"))]
    quads += [Quad(NS + "c1", NS + "target", NS + "s", t), Quad(NS + "c2", NS + "target", NS + "s", t)]
    g = _graph(quads)
    assert neighbors(g, NS + "s", t, "Service->Connection") == {NS + "c1", NS + "c2"}
    assert neighbors(g, NS + "p", t, "Pod->Node") == set()
    with pytest.raises(KeyError):
        neighbors(g, NS + "ghost", t, "Pod->Node")
    with pytest.raises(KeyError):
        neighbors(g, NS + "p", 99, "Pod->Node")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_neighbors_match_linear_scan(seed):
    quads = random_quads(seed)
    g = _graph(quads)
    for kind in oracles.REL:
        child = kind.split("->")[0]
        for e in g.registry.entities[child]:
            for t in g.timestamps.tolist():
                assert neighbors(g, e, t, kind) == oracles.related(quads, e, t, kind)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2**32 - 1))
def test_quad_order_does_not_matter(seed, perm_seed):
    quads = random_quads(seed)
    shuffled = [quads[i] for i in np.random.default_rng(perm_seed).permutation(len(quads))]
    _same_graph(_graph(quads), _graph(shuffled))


def test_hierarchy_matches_generator_adjacency():
    truth = generate(ScenarioConfig(seed=5, duration=120, reschedule_rate=0.02))
    g = _graph(truth.all_quads())
    for ti, adj in enumerate(truth.adjacency):
        for kind, pairs in adj.items():
            child, parent = kind.split("->")
            names_c, names_p = g.registry.entities[child], g.registry.entities[parent]
            got = {(names_c[a], names_p[b]) for a, b in g.hierarchy.at(kind, ti).tolist()}
            assert got == pairs, (ti, kind)


def test_edges_reference_present_entities_or_warn():
    quads = random_quads(7)
    g = _graph(quads)
    assert g.warnings == []
    dangling = [Quad(NS + "connection-x", RDF_TYPE, NS + "Connection", 1000),
                Quad(NS + "connection-x", NS + "target", NS + "service-0", 1015)]
    g2 = _graph(quads + dangling)
    assert any("dangling" in w for w in g2.warnings)


def test_cache_round_trip(tmp_path):
    g = _graph(random_quads(21))
    save_graph(g, tmp_path / "g.dkgc")
    back = load_graph(tmp_path / "g.dkgc")
    _same_graph(g, back)
    assert (tmp_path / "g.dkgc").read_bytes()[:4] == b"DKGC"


def test_cache_rejects_other_files(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError):
        load_graph(tmp_path / "bad")
