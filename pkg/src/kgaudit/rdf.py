"""RDF terms, triples, and a small in-memory graph used for tests and oracles."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class RdfError(ValueError):
    """Raised when an RDF term or triple violates its well-formedness rules."""


class TermKind(str, Enum):
    IRI = "iri"
    BLANK = "blank"
    LITERAL = "literal"


# Absolute IRI: a scheme followed by characters legal inside an IRIREF.
_IRI_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:[^\x00-\x20<>\"{}|^`\\]*$")


@dataclass(frozen=True)
class RdfTerm:
    """One RDF term: an IRI, a blank node label, or a literal.

    ``datatype`` and ``language`` are only meaningful for literals and are
    mutually exclusive.
    """

    kind: TermKind
    value: str
    datatype: str | None = None
    language: str | None = None

    def __post_init__(self) -> None:
        if self.kind is TermKind.IRI and not _IRI_RE.match(self.value):
            raise RdfError(f"not a valid absolute IRI: {self.value!r}")
        if self.kind is not TermKind.LITERAL:
            if self.datatype is not None or self.language is not None:
                raise RdfError("datatype/language are only allowed on literals")
        elif self.datatype is not None and self.language is not None:
            raise RdfError("a literal cannot carry both datatype and language")
        if self.datatype is not None and not _IRI_RE.match(self.datatype):
            raise RdfError(f"datatype is not a valid IRI: {self.datatype!r}")

    @classmethod
    def iri(cls, value: str) -> RdfTerm:
        return cls(TermKind.IRI, value)

    @classmethod
    def blank(cls, label: str) -> RdfTerm:
        return cls(TermKind.BLANK, label)

    @classmethod
    def literal(cls, value: str, datatype: str | None = None, language: str | None = None) -> RdfTerm:
        return cls(TermKind.LITERAL, value, datatype=datatype, language=language)

    @property
    def is_iri(self) -> bool:
        return self.kind is TermKind.IRI

    @property
    def is_literal(self) -> bool:
        return self.kind is TermKind.LITERAL

    def n3(self) -> str:
        """Render the term in N-Triples syntax."""
        if self.kind is TermKind.IRI:
            return f"<{self.value}>"
        if self.kind is TermKind.BLANK:
            return f"_:{self.value}"
        escaped = (
            self.value.replace("\\", "\\\\")
            .replace('"', '\\"')
            .replace("\n", "\\n")
            .replace("\r", "\\r")
        )
        if self.language:
            return f'"{escaped}"@{self.language}'
        if self.datatype:
            return f'"{escaped}"^^<{self.datatype}>'
        return f'"{escaped}"'


@dataclass(frozen=True)
class Triple:
    """A single RDF statement."""

    subject: RdfTerm
    property: RdfTerm
    object: RdfTerm

    def __post_init__(self) -> None:
        if self.subject.kind is TermKind.LITERAL:
            raise RdfError("triple subject must be an IRI or blank node")
        if self.property.kind is not TermKind.IRI:
            raise RdfError("triple property must be an IRI")

    def n3(self) -> str:
        return f"{self.subject.n3()} {self.property.n3()} {self.object.n3()} ."


TripleSet = list[Triple]


def local_name(iri: str) -> str:
    """The fragment after the last ``#`` or ``/`` of an IRI (label fallback)."""
    for sep in ("#", "/"):
        if sep in iri:
            tail = iri.rsplit(sep, 1)[1]
            if tail:
                return tail
    return iri


def triple(s: str, p: str, o: str | RdfTerm) -> Triple:
    """Shorthand constructor: IRIs for s/p, IRI or ready-made term for o."""
    obj = o if isinstance(o, RdfTerm) else RdfTerm.iri(o)
    return Triple(RdfTerm.iri(s), RdfTerm.iri(p), obj)


@dataclass
class InMemoryGraph:
    """A plain set-of-triples graph, enough for toy fixtures and oracles.

    Not a triple store: no persistence, no indexes beyond linear scans.
    Insertion order of triples is preserved.
    """

    triples: TripleSet = field(default_factory=list)

    def add(self, t: Triple) -> None:
        if t not in self.triples:
            self.triples.append(t)

    def extend(self, triples: list[Triple]) -> None:
        for t in triples:
            self.add(t)

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    def subjects_where(self, prop: str, obj: str) -> set[str]:
        return {
            t.subject.value
            for t in self.triples
            if t.property.value == prop and t.object.is_iri and t.object.value == obj
        }

    def neighborhood(self, iri: str) -> TripleSet:
        """Triples where ``iri`` occurs as subject or object, insertion order."""
        out: TripleSet = []
        for t in self.triples:
            if t.subject.value == iri or (not t.object.is_literal and t.object.value == iri):
                out.append(t)
        return out

    def labels_of(self, iri: str, label_property: str) -> list[RdfTerm]:
        return [
            t.object
            for t in self.triples
            if t.subject.value == iri and t.property.value == label_property and t.object.is_literal
        ]
