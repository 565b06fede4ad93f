"""Restricted Turtle reader/writer for timestamped knowledge-graph snapshots.

Supported: ``@prefix`` directives, prefixed names, ``<IRI>`` references, the
``a`` keyword, plain and typed literals (numbers, booleans, single-line
strings), ``;``/``,`` lists, ``.`` terminators and ``#`` comments.  Blank
nodes, collections and multi-line strings are rejected.
"""

from __future__ import annotations

import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .ontology import RDF, RDF_TYPE, XSD, Attribute, OntologySchema, Relation, NUMERIC_KINDS

log = logging.getLogger(__name__)

XSD_STRING = XSD + "string"
XSD_INTEGER = XSD + "integer"
XSD_DECIMAL = XSD + "decimal"
XSD_DOUBLE = XSD + "double"
XSD_BOOLEAN = XSD + "boolean"
RDF_LANGSTRING = RDF + "langString"

_INTEGER_RE = r"[+-]?\d+"
_DECIMAL_RE = r"[+-]?\d*\.\d+"
_DOUBLE_RE = r"[+-]?(?:\d+\.\d*[eE][+-]?\d+|\.\d+[eE][+-]?\d+|\d+[eE][+-]?\d+)"
_LEXICAL = {
    XSD_INTEGER: re.compile(_INTEGER_RE + r"\Z"),
    XSD_DECIMAL: re.compile(r"(?:" + _DECIMAL_RE + "|" + _INTEGER_RE + r")\Z"),
    XSD_DOUBLE: re.compile(r"(?:" + _DOUBLE_RE + "|" + _DECIMAL_RE + "|" + _INTEGER_RE + r"|[+-]?INF|NaN)\Z"),
    XSD_BOOLEAN: re.compile(r"(?:true|false|1|0)\Z"),
}

_PN_PREFIX = r"[A-Za-z](?:[\w\-]|\.(?=[\w\-]))*"
_PN_LOCAL = r"(?:[\w\-:%]|\.(?=[\w\-:%]))*"
_LOCAL_OK = re.compile(r"[\w\-:%](?:[\w\-:%]|\.(?=[\w\-:%]))*\Z")

_TOKEN_RE = re.compile(
    r"""
    (?P<WS>[ \t\r\n]+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<IRI><[^<>"{}|^`\\\s]*>)
  | (?P<PREFIX>@prefix\b)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<LANG>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<DTYPE>\^\^)
  | (?P<DOUBLE>""" + _DOUBLE_RE + r""")
  | (?P<DECIMAL>""" + _DECIMAL_RE + r""")
  | (?P<INTEGER>""" + _INTEGER_RE + r""")
  | (?P<PNAME>(?:""" + _PN_PREFIX + r""")?:""" + _PN_LOCAL + r""")
  | (?P<BOOL>(?:true|false)(?![\w:]))
  | (?P<A>a(?![\w:]))
  | (?P<PUNCT>[.;,])
  | (?P<ERR>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", '"': '"', "\\": "\\", "'": "'", "b": "\b", "f": "\f"}


class TTLSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class Literal(NamedTuple):
    lexical: str
    datatype: str = XSD_STRING
    lang: str | None = None

    @property
    def value(self):
        """Python value of the literal (int, float, bool or str)."""
        if self.datatype == XSD_INTEGER:
            return int(self.lexical)
        if self.datatype in (XSD_DECIMAL, XSD_DOUBLE):
            return float(self.lexical)
        if self.datatype == XSD_BOOLEAN:
            return self.lexical in ("true", "1")
        return self.lexical


class Quad(NamedTuple):
    subject: str
    predicate: str
    object: str | Literal
    timestamp: int


@dataclass(frozen=True)
class SnapshotFile:
    path: Path
    timestamp: int


def _unescape(body: str) -> str:
    if "\\" not in body:
        return body
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt == "u":
            out.append(chr(int(body[i + 2:i + 6], 16)))
            i += 6
        elif nxt == "U":
            out.append(chr(int(body[i + 2:i + 10], 16)))
            i += 10
        else:
            raise ValueError(f"bad escape \\{nxt}")
    return "".join(out)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


class _Parser:
    def __init__(self, text: str, timestamp: int):
        self.text = text
        self.timestamp = timestamp
        self.prefixes: dict[str, str] = {}
        self.tokens = [
            (m.lastgroup, m.group(), m.start())
            for m in _TOKEN_RE.finditer(text)
            if m.lastgroup not in ("WS", "COMMENT")
        ]
        self.pos = 0

    def error(self, message: str, offset: int | None = None):
        if offset is None:
            offset = self.tokens[self.pos][2] if self.pos < len(self.tokens) else len(self.text)
        line, col = _position(self.text, offset)
        raise TTLSyntaxError(message, line, col)

    def next(self, what: str):
        if self.pos >= len(self.tokens):
            self.error(f"unexpected end of input, expected {what}")
        tok = self.tokens[self.pos]
        self.pos += 1
        if tok[0] == "ERR":
            self.error(f"unexpected character {tok[1]!r}", tok[2])
        return tok

    def expand(self, tok) -> str:
        kind, value, offset = tok
        if kind == "IRI":
            return value[1:-1]
        if kind == "PNAME":
            prefix, _, local = value.partition(":")
            try:
                return self.prefixes[prefix] + local
            except KeyError:
                self.error(f"undefined prefix {prefix!r}", offset)
        self.error(f"expected IRI, got {value!r}", offset)

    def parse(self) -> list[Quad]:
        out: list[Quad] = []
        while self.pos < len(self.tokens):
            kind, value, offset = self.tokens[self.pos]
            if kind == "PREFIX":
                self.pos += 1
                name = self.next("prefix name")
                if name[0] != "PNAME" or not name[1].endswith(":") or name[1].count(":") != 1:
                    self.error("expected prefix name ending in ':'", name[2])
                iri = self.next("IRI")
                if iri[0] != "IRI":
                    self.error("expected <IRI> in @prefix", iri[2])
                self.prefixes[name[1][:-1]] = iri[1][1:-1]
                self._expect_dot()
            else:
                self._triples(out)
        return out

    def _expect_dot(self):
        tok = self.next("'.'")
        if tok[:2] != ("PUNCT", "."):
            self.error(f"expected '.', got {tok[1]!r}", tok[2])

    def _triples(self, out: list[Quad]):
        subj_tok = self.next("subject")
        if subj_tok[0] not in ("IRI", "PNAME"):
            self.error(f"expected subject IRI, got {subj_tok[1]!r}", subj_tok[2])
        subject = self.expand(subj_tok)
        ts = self.timestamp
        while True:
            pred_tok = self.next("predicate")
            predicate = RDF_TYPE if pred_tok[0] == "A" else self.expand(pred_tok)
            while True:
                out.append(Quad(subject, predicate, self._object(), ts))
                sep = self.next("'.', ';' or ','")
                if sep[0] != "PUNCT":
                    self.error(f"expected '.', ';' or ',', got {sep[1]!r}", sep[2])
                if sep[1] != ",":
                    break
            if sep[1] == ".":
                return
            # ';' may be followed directly by the terminating '.'
            if self.pos < len(self.tokens) and self.tokens[self.pos][:2] == ("PUNCT", "."):
                self.pos += 1
                return

    def _object(self):
        tok = self.next("object")
        kind, value, offset = tok
        if kind in ("IRI", "PNAME"):
            return self.expand(tok)
        if kind == "INTEGER":
            return Literal(value, XSD_INTEGER)
        if kind == "DECIMAL":
            return Literal(value, XSD_DECIMAL)
        if kind == "DOUBLE":
            return Literal(value, XSD_DOUBLE)
        if kind == "BOOL":
            return Literal(value, XSD_BOOLEAN)
        if kind == "STRING":
            try:
                lexical = _unescape(value[1:-1])
            except (ValueError, IndexError):
                self.error("invalid escape sequence in string", offset)
            nxt = self.tokens[self.pos] if self.pos < len(self.tokens) else None
            if nxt is not None and nxt[0] == "LANG":
                self.pos += 1
                return Literal(lexical, RDF_LANGSTRING, nxt[1][1:])
            if nxt is not None and nxt[0] == "DTYPE":
                self.pos += 1
                datatype = self.expand(self.next("datatype IRI"))
                pattern = _LEXICAL.get(datatype)
                if pattern is not None and not pattern.match(lexical):
                    self.error(f"malformed literal {lexical!r} for datatype {datatype}", offset)
                return Literal(lexical, datatype)
            return Literal(lexical, XSD_STRING)
        if kind == "ERR":
            self.error(f"unexpected character {value!r}", offset)
        self.error(f"expected object, got {value!r}", offset)


def parse_ttl(text: str, timestamp: int) -> list[Quad]:
    """Parse a Turtle document into quads stamped with ``timestamp``."""
    return _Parser(text, int(timestamp)).parse()


def parse_snapshot(snapshot: SnapshotFile) -> list[Quad]:
    return parse_ttl(snapshot.path.read_text(encoding="utf-8"), snapshot.timestamp)


_SNAPSHOT_RE = re.compile(r"snapshot_(\d+)\.ttl\Z")


def scan_snapshot_dir(directory: str | os.PathLike) -> list[SnapshotFile]:
    """Find ``snapshot_<epochsecs>.ttl`` files below ``directory``, sorted by time.

    Nested directories are searched too; two files resolving to the same
    timestamp are an error.  Other files are skipped and counted.
    """
    root = Path(directory)
    if not root.is_dir():
        raise NotADirectoryError(f"not a directory: {root}")
    found: dict[int, Path] = {}
    ignored = 0
    for dirpath, dirnames, filenames in os.walk(root, onerror=_raise):
        dirnames.sort()
        for name in sorted(filenames):
            m = _SNAPSHOT_RE.match(name)
            if m is None:
                ignored += 1
                continue
            t = int(m.group(1))
            path = Path(dirpath) / name
            if t in found:
                raise ValueError(f"duplicate snapshot timestamp {t}: {found[t]} and {path}")
            found[t] = path
    if ignored:
        log.warning("ignored %d non-snapshot file(s) under %s", ignored, root)
    return [SnapshotFile(found[t], t) for t in sorted(found)]


def _raise(err):
    raise err


def _term(iri: str, inverse: list[tuple[str, str]]) -> str:
    for ns, prefix in inverse:
        if iri.startswith(ns):
            local = iri[len(ns):]
            if _LOCAL_OK.match(local):
                return f"{prefix}:{local}"
    return f"<{iri}>"


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")


def _literal(lit: Literal, inverse) -> str:
    lex, dt = lit.lexical, lit.datatype
    if dt == XSD_INTEGER and re.fullmatch(_INTEGER_RE, lex):
        return lex
    if dt == XSD_DECIMAL and re.fullmatch(_DECIMAL_RE, lex):
        return lex
    if dt == XSD_DOUBLE and re.fullmatch(_DOUBLE_RE, lex):
        return lex
    if dt == XSD_BOOLEAN and lex in ("true", "false"):
        return lex
    body = f'"{_escape(lex)}"'
    if lit.lang is not None:
        return f"{body}@{lit.lang}"
    if dt == XSD_STRING:
        return body
    return f"{body}^^{_term(dt, inverse)}"


def emit_snapshot(quads: Iterable[Quad], prefixes: dict[str, str] | None = None) -> str:
    """Serialize quads as one triple per line; the timestamp is not written."""
    prefixes = dict(prefixes or {})
    prefixes.setdefault("xsd", XSD)
    # longest namespace first so nested namespaces pick the tightest prefix
    inverse = sorted(((ns, p) for p, ns in prefixes.items()), key=lambda x: -len(x[0]))
    lines = [f"@prefix {p}: <{ns}> ." for p, ns in prefixes.items()]
    cache: dict[str, str] = {}
    for q in quads:
        s = cache.get(q.subject) or cache.setdefault(q.subject, _term(q.subject, inverse))
        if q.predicate == RDF_TYPE:
            p = "a"
        else:
            p = cache.get(q.predicate) or cache.setdefault(q.predicate, _term(q.predicate, inverse))
        if isinstance(q.object, Literal):
            o = _literal(q.object, inverse)
        else:
            o = cache.get(q.object) or cache.setdefault(q.object, _term(q.object, inverse))
        lines.append(f"{s} {p} {o} .")
    return "\n".join(lines) + "\n"


def snapshot_filename(timestamp: int) -> str:
    return f"snapshot_{int(timestamp)}.ttl"


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    accepted: list[Quad] = field(default_factory=list)
    unknown_predicate: list[Quad] = field(default_factory=list)
    violations: list[tuple[Quad, str]] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "accepted": len(self.accepted),
            "unknown_predicate": len(self.unknown_predicate),
            "violations": len(self.violations),
        }

    def summary(self) -> str:
        c = self.counts
        lines = [
            f"accepted quads:      {c['accepted']}",
            f"unknown predicates:  {c['unknown_predicate']}",
            f"type violations:     {c['violations']}",
        ]
        reasons = Counter(reason for _, reason in self.violations)
        for reason, n in sorted(reasons.items()):
            lines.append(f"  {n:6d}  {reason}")
        unknown = Counter(q.predicate for q in self.unknown_predicate)
        for pred, n in sorted(unknown.items()):
            lines.append(f"  {n:6d}  unknown <{pred}>")
        return "\n".join(lines) + "\n"


def _literal_kind_ok(lit: Literal, kind: str) -> bool:
    if kind == "integer":
        return lit.datatype == XSD_INTEGER
    if kind == "decimal":
        return lit.datatype in (XSD_DECIMAL, XSD_INTEGER, XSD_DOUBLE)
    if kind == "boolean":
        return lit.datatype == XSD_BOOLEAN
    return lit.datatype in (XSD_STRING, RDF_LANGSTRING)


def validate_quads(quads: Sequence[Quad], schema: OntologySchema) -> ValidationReport:
    """Partition quads into accepted / unknown-predicate / violation."""
    types: dict[str, str | None] = {}
    for q in quads:
        if q.predicate == RDF_TYPE and not isinstance(q.object, Literal):
            cat = schema.category_of_class(q.object)
            prev = types.get(q.subject, cat)
            types[q.subject] = cat if prev == cat else None

    report = ValidationReport()
    for q in quads:
        if q.predicate == RDF_TYPE:
            if isinstance(q.object, Literal) or schema.category_of_class(q.object) is None:
                report.violations.append((q, "type is not an ontology category"))
            elif types.get(q.subject) is None:
                report.violations.append((q, "entity typed with conflicting categories"))
            else:
                report.accepted.append(q)
            continue
        decl = schema.lookup(q.predicate)
        if decl is None:
            report.unknown_predicate.append(q)
            continue
        subj_cat = types.get(q.subject)
        if isinstance(decl, Attribute):
            if subj_cat != decl.category:
                report.violations.append((q, f"attribute {decl.name} requires a {decl.category} subject"))
            elif not isinstance(q.object, Literal) or not _literal_kind_ok(q.object, decl.kind):
                report.violations.append((q, f"attribute {decl.name} requires a {decl.kind} literal"))
            else:
                report.accepted.append(q)
        else:
            assert isinstance(decl, Relation)
            obj_cat = None if isinstance(q.object, Literal) else types.get(q.object)
            if subj_cat != decl.domain or obj_cat != decl.range:
                report.violations.append(
                    (q, f"relation {decl.predicate.rsplit('#', 1)[-1]} must link {decl.domain} to {decl.range}")
                )
            else:
                report.accepted.append(q)
    return report


def numeric_kind(kind: str) -> bool:
    return kind in NUMERIC_KINDS
