from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkgad.ontology import RDF_TYPE, microservice_schema
from dkgad.ttl import (
    XSD_BOOLEAN,
    XSD_DECIMAL,
    XSD_INTEGER,
    XSD_STRING,
    Literal,
    Quad,
    TTLSyntaxError,
    emit_snapshot,
    parse_snapshot,
    parse_ttl,
    scan_snapshot_dir,
    validate_quads,
)

from oracles import NS, random_quads

SCHEMA = microservice_schema()


def test_single_type_statement():
    quads = parse_ttl("@prefix k: <http://ex/k#> . k:pod1 a k:Pod .", 100)
    assert quads == [Quad("http://ex/k#pod1", RDF_TYPE, "http://ex/k#Pod", 100)]


def test_empty_document():
    assert parse_ttl("", 5) == []
    assert parse_ttl("# only a comment\n", 5) == []


def test_literals_and_full_iris():
    text = """@prefix k: <http://ex/k#> .
@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .
<http://ex/k#a> k:n 42 ; k:x -1.5 , 2.0 .
k:a k:ok true .
k:a k:s "say \\"hi\\"" .
k:a k:typed "7"^^xsd:integer .
"""
    quads = parse_ttl(text, 9)
    objs = [q.object for q in quads]
    assert objs == [
        Literal("42", XSD_INTEGER), Literal("-1.5", XSD_DECIMAL), Literal("2.0", XSD_DECIMAL),
        Literal("true", XSD_BOOLEAN), Literal('say "hi"', XSD_STRING), Literal("7", XSD_INTEGER),
    ]
    assert {q.timestamp for q in quads} == {9}
    assert all(q.subject == "http://ex/k#a" for q in quads)


def test_undefined_prefix_reports_position():
    with pytest.raises(TTLSyntaxError) as err:
        parse_ttl("@prefix k: <http://ex/k#> .\nk:a z:b k:c .", 0)
    assert err.value.line == 2
    assert "z" in str(err.value)


def test_syntax_error_line_column():
    with pytest.raises(TTLSyntaxError) as err:
        parse_ttl("<http://a> <http://b> <http://c>\n<http://d> <http://e> <http://f> .", 0)
    assert err.value.line == 2 and err.value.column == 1


def test_malformed_typed_literal():
    with pytest.raises(TTLSyntaxError):
        parse_ttl('<http://a> <http://b> "1.5x"^^<http://www.w3.org/2001/XMLSchema#decimal> .', 0)


def test_blank_nodes_are_rejected():
    with pytest.raises(TTLSyntaxError):
        parse_ttl("<http://a> <http://b> [ <http://c> 1 ] .", 0)


def test_scan_sorts_and_ignores(tmp_path):
    (tmp_path / "snapshot_30.ttl").write_text("")
    (tmp_path / "snapshot_15.ttl").write_text("")
    (tmp_path / "snapshot_15b.ttl").write_text("")
    (tmp_path / "notes.txt").write_text("")
    snaps = scan_snapshot_dir(tmp_path)
    assert [s.timestamp for s in snaps] == [15, 30]


def test_scan_empty(tmp_path):
    assert scan_snapshot_dir(tmp_path) == []


def test_scan_duplicate_timestamp(tmp_path):
    (tmp_path / "snapshot_15.ttl").write_text("")
    (tmp_path / "run2").mkdir()
    (tmp_path / "run2" / "snapshot_15.ttl").write_text("")
    with pytest.raises(ValueError, match="duplicate"):
        scan_snapshot_dir(tmp_path)


def test_scan_missing_directory(tmp_path):
    with pytest.raises(NotADirectoryError):
        scan_snapshot_dir(tmp_path / "nope")


def test_snapshot_timestamp_comes_from_file_name(tmp_path):
    (tmp_path / "snapshot_1234.ttl").write_text("<http://a> <http://b> <http://c> .\n")
    (snap,) = scan_snapshot_dir(tmp_path)
    assert [q.timestamp for q in parse_snapshot(snap)] == [1234]


def _typed(entity, cat, t=0):
    return Quad(NS + entity, RDF_TYPE, NS + cat, t)


def test_validate_accepts_pod_cpu():
    quads = [_typed("p", "Pod"), Quad(NS + "p", NS + "pod_cpu", Literal("2.0", XSD_DECIMAL), 0)]
    report = validate_quads(quads, SCHEMA)
    assert report.counts == {"accepted": 2, "unknown_predicate": 0, "violations": 0}


def test_validate_unknown_predicate():
    quads = [_typed("p", "Pod"), Quad(NS + "p", NS + "colour", Literal("red"), 0)]
    assert validate_quads(quads, SCHEMA).counts["unknown_predicate"] == 1


def test_validate_connection_to_pod_is_violation():
    quads = [_typed("c", "Connection"), _typed("p", "Pod"), _typed("q", "Pod"),
             Quad(NS + "c", NS + "target", NS + "q", 0)]
    report = validate_quads(quads, SCHEMA)
    assert report.counts["violations"] == 1
    assert "Connection to Service" in report.violations[0][1]


def test_validate_literal_kind():
    quads = [_typed("p", "Pod"), Quad(NS + "p", NS + "pod_restarts", Literal("1.5", XSD_DECIMAL), 0),
             Quad(NS + "p", NS + "pod_ready", Literal("3", XSD_INTEGER), 0)]
    assert validate_quads(quads, SCHEMA).counts["violations"] == 2


def test_validate_partitions_every_quad():
    quads = random_quads(3)
    quads.append(Quad(NS + "x", NS + "mystery", Literal("1", XSD_INTEGER), 1000))
    report = validate_quads(quads, SCHEMA)
    assert sum(report.counts.values()) == len(quads)
    assert report.counts["unknown_predicate"] == 1 and report.counts["violations"] == 0
    text = report.summary()
    assert "accepted quads" in text and text.endswith("\n")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_emit_parse_round_trip(seed):
    quads = random_quads(seed)
    t = quads[0].timestamp
    snap = [q for q in quads if q.timestamp == t]
    text = emit_snapshot(snap, {"k": NS})
    back = parse_ttl(text, t)
    assert Counter(back) == Counter(snap)
    assert parse_ttl(text, t) == back  # deterministic


_safe_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)


@settings(max_examples=100, deadline=None)
@given(_safe_text, st.integers(-10**6, 10**6), st.booleans())
def test_literal_round_trip(text, number, flag):
    quads = [
        Quad("http://ex/a", "http://ex/s", Literal(text), 3),
        Quad("http://ex/a", "http://ex/n", Literal(str(number), XSD_INTEGER), 3),
        Quad("http://ex/a", "http://ex/b", Literal("true" if flag else "false", XSD_BOOLEAN), 3),
    ]
    assert parse_ttl(emit_snapshot(quads), 3) == quads
