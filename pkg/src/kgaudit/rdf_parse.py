"""Parsers for N-Triples documents and the commonly emitted subset of Turtle.

Both parsers preserve document order, which downstream code relies on when
truncating DESCRIBE responses. The Turtle parser covers what SPARQL endpoints
actually serialize: prefix/base directives, prefixed names, ``a``, predicate
and object lists, anonymous blank nodes, collections, and all literal forms.
"""

from __future__ import annotations

import re
from typing import Iterator

from .rdf import RdfTerm, TermKind, Triple, TripleSet

XSD = "http://www.w3.org/2001/XMLSchema#"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDF_TYPE = RDF_NS + "type"
RDF_FIRST = RDF_NS + "first"
RDF_REST = RDF_NS + "rest"
RDF_NIL = RDF_NS + "nil"


class ParseError(ValueError):
    """Malformed N-Triples or Turtle input."""

    def __init__(self, message: str, line: int | None = None):
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(message + suffix)
        self.line = line


_ECHARS = {
    "t": "\t",
    "b": "\b",
    "n": "\n",
    "r": "\r",
    "f": "\f",
    '"': '"',
    "'": "'",
    "\\": "\\",
}


def _unescape(raw: str, line: int | None = None) -> str:
    """Resolve ECHAR and \\uXXXX / \\UXXXXXXXX escapes."""
    if "\\" not in raw:
        return raw
    out: list[str] = []
    i = 0
    n = len(raw)
    while i < n:
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= n:
            raise ParseError("dangling backslash in string", line)
        esc = raw[i + 1]
        if esc in _ECHARS:
            out.append(_ECHARS[esc])
            i += 2
        elif esc == "u":
            out.append(chr(int(raw[i + 2 : i + 6], 16)))
            i += 6
        elif esc == "U":
            out.append(chr(int(raw[i + 2 : i + 10], 16)))
            i += 10
        else:
            raise ParseError(f"unknown escape \\{esc}", line)
    return "".join(out)


# ---------------------------------------------------------------------------
# N-Triples


def _nt_term_pattern(prefix: str) -> str:
    """Alternation matching one N-Triples term, group names prefixed."""
    iri = r"[^<>\"{}|^`\\\x00-\x20]*"
    return (
        rf"(?:<(?P<{prefix}iri>{iri})>"
        rf"|_:(?P<{prefix}bnode>[A-Za-z0-9][A-Za-z0-9_.-]*)"
        rf"|\"(?P<{prefix}lit>(?:[^\"\\\n\r]|\\.)*)\""
        rf"(?:\^\^<(?P<{prefix}dt>{iri})>"
        rf"|@(?P<{prefix}lang>[a-zA-Z]+(?:-[a-zA-Z0-9]+)*))?)"
    )


_NT_LINE = re.compile(
    r"^\s*"
    + _nt_term_pattern("s_")
    + r"\s+<(?P<p>[^<>\"{}|^`\\\x00-\x20]*)>\s+"
    + _nt_term_pattern("o_")
    + r"\s*\.\s*(?:#.*)?$"
)


def parse_ntriples(text: str) -> TripleSet:
    """Parse an N-Triples document, preserving line order."""
    triples: TripleSet = []
    # Split on newlines only: str.splitlines() would also split on control
    # characters that are legal inside literals.
    for lineno, raw_line in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        m = _NT_LINE.match(line)
        if not m:
            raise ParseError(f"invalid N-Triples statement: {line[:80]!r}", lineno)
        if m.group("s_iri") is not None:
            subject = RdfTerm.iri(_unescape(m.group("s_iri"), lineno))
        elif m.group("s_bnode") is not None:
            subject = RdfTerm.blank(m.group("s_bnode"))
        else:
            raise ParseError("subject must be an IRI or blank node", lineno)
        prop = RdfTerm.iri(_unescape(m.group("p"), lineno))
        if m.group("o_iri") is not None:
            obj = RdfTerm.iri(_unescape(m.group("o_iri"), lineno))
        elif m.group("o_bnode") is not None:
            obj = RdfTerm.blank(m.group("o_bnode"))
        else:
            obj = RdfTerm.literal(
                _unescape(m.group("o_lit"), lineno),
                datatype=m.group("o_dt"),
                language=m.group("o_lang"),
            )
        triples.append(Triple(subject, prop, obj))
    return triples


def serialize_ntriples(triples: TripleSet) -> str:
    return "".join(t.n3() + "\n" for t in triples)


# ---------------------------------------------------------------------------
# Turtle


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+|\#[^\n]*)
    | (?P<iriref><[^<>"{}|^`\\\x00-\x20]*>)
    | (?P<string>\"\"\"(?:[^"\\]|\\.|"(?!""))*\"\"\"|'''(?:[^'\\]|\\.|'(?!''))*'''|"(?:[^"\\\n\r]|\\.)*"|'(?:[^'\\\n\r]|\\.)*')
    | (?P<prefix_decl>@prefix\b|@base\b|(?i:PREFIX)(?=\s)|(?i:BASE)(?=\s))
    | (?P<langtag>@[a-zA-Z]+(?:-[a-zA-Z0-9]+)*)
    | (?P<dtmark>\^\^)
    | (?P<bnode>_:[A-Za-z0-9][A-Za-z0-9_.-]*)
    | (?P<double>[+-]?(?:\d+\.\d*|\.?\d+)[eE][+-]?\d+)
    | (?P<decimal>[+-]?\d*\.\d+)
    | (?P<integer>[+-]?\d+)
    | (?P<punct>[.;,\[\]()])
    | (?P<pname>(?:[A-Za-z_][\w.-]*)?:(?:(?:[\w:.-]|%[0-9A-Fa-f]{2}|\\[_~.!$&'()*+,;=/?\#@%-])*)?)
    | (?P<keyword>\b(?:a|true|false)\b)
    """,
    re.VERBOSE,
)


class _Token:
    __slots__ = ("kind", "text", "line")

    def __init__(self, kind: str, text: str, line: int):
        self.kind = kind
        self.text = text
        self.line = line

    def __repr__(self) -> str:  # pragma: no cover
        return f"_Token({self.kind}, {self.text!r})"


def _tokenize(text: str) -> Iterator[_Token]:
    pos = 0
    line = 1
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line)
        matched = m.group(0)
        line += matched.count("\n")
        pos = m.end()
        kind = m.lastgroup or ""
        if kind == "ws":
            continue
        yield _Token(kind, matched, line)
    yield _Token("eof", "", line)


class _TurtleParser:
    def __init__(self, text: str, base: str | None = None):
        self._tokens = list(_tokenize(text))
        self._pos = 0
        self._base = base
        self._prefixes: dict[str, str] = {}
        self._bnode_counter = 0
        self.triples: TripleSet = []

    # token helpers

    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _next(self) -> _Token:
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def _expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self._next()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ParseError(f"expected {text or kind}, got {tok.text!r}", tok.line)
        return tok

    def _fresh_bnode(self) -> RdfTerm:
        self._bnode_counter += 1
        return RdfTerm.blank(f"genid{self._bnode_counter}")

    # grammar

    def parse(self) -> TripleSet:
        while self._peek().kind != "eof":
            tok = self._peek()
            if tok.kind == "prefix_decl":
                self._directive()
            else:
                self._triples_block()
                self._expect("punct", ".")
        return self.triples

    def _directive(self) -> None:
        tok = self._next()
        keyword = tok.text.lower().lstrip("@")
        if keyword == "prefix":
            pname = self._expect("pname")
            if not pname.text.endswith(":"):
                raise ParseError("prefix declaration must end with ':'", pname.line)
            iri = self._iriref(self._expect("iriref"))
            self._prefixes[pname.text[:-1]] = iri
        elif keyword == "base":
            self._base = self._iriref(self._expect("iriref"))
        else:  # pragma: no cover - tokenizer only emits prefix/base
            raise ParseError(f"unknown directive {tok.text!r}", tok.line)
        if tok.text.startswith("@"):
            self._expect("punct", ".")

    def _triples_block(self) -> None:
        tok = self._peek()
        if tok.kind == "punct" and tok.text == "[":
            subject = self._bnode_property_list()
            if not (self._peek().kind == "punct" and self._peek().text == "."):
                self._predicate_object_list(subject)
        else:
            subject = self._subject()
            self._predicate_object_list(subject)

    def _predicate_object_list(self, subject: RdfTerm) -> None:
        while True:
            verb = self._verb()
            while True:
                obj = self._object()
                self.triples.append(Triple(subject, verb, obj))
                if self._peek().kind == "punct" and self._peek().text == ",":
                    self._next()
                    continue
                break
            if self._peek().kind == "punct" and self._peek().text == ";":
                self._next()
                # trailing ';' before '.' or ']' is legal
                nxt = self._peek()
                if nxt.kind == "punct" and nxt.text in (".", "]", ";"):
                    while self._peek().kind == "punct" and self._peek().text == ";":
                        self._next()
                    if self._peek().kind == "punct" and self._peek().text in (".", "]"):
                        return
                continue
            return

    def _verb(self) -> RdfTerm:
        tok = self._peek()
        if tok.kind == "keyword" and tok.text == "a":
            self._next()
            return RdfTerm.iri(RDF_TYPE)
        term = self._subject()
        if term.kind is not TermKind.IRI:
            raise ParseError("predicate must be an IRI", tok.line)
        return term

    def _subject(self) -> RdfTerm:
        tok = self._next()
        if tok.kind == "iriref":
            return RdfTerm.iri(self._iriref(tok))
        if tok.kind == "pname":
            return RdfTerm.iri(self._pname(tok))
        if tok.kind == "bnode":
            return RdfTerm.blank(tok.text[2:])
        if tok.kind == "punct" and tok.text == "(":
            return self._collection_started()
        raise ParseError(f"unexpected token {tok.text!r} for subject", tok.line)

    def _object(self) -> RdfTerm:
        tok = self._peek()
        if tok.kind == "punct" and tok.text == "[":
            return self._bnode_property_list()
        if tok.kind == "punct" and tok.text == "(":
            self._next()
            return self._collection_started()
        if tok.kind == "string":
            return self._literal()
        if tok.kind == "integer":
            self._next()
            return RdfTerm.literal(tok.text, datatype=XSD + "integer")
        if tok.kind == "decimal":
            self._next()
            return RdfTerm.literal(tok.text, datatype=XSD + "decimal")
        if tok.kind == "double":
            self._next()
            return RdfTerm.literal(tok.text, datatype=XSD + "double")
        if tok.kind == "keyword" and tok.text in ("true", "false"):
            self._next()
            return RdfTerm.literal(tok.text, datatype=XSD + "boolean")
        return self._subject()

    def _bnode_property_list(self) -> RdfTerm:
        self._expect("punct", "[")
        node = self._fresh_bnode()
        if not (self._peek().kind == "punct" and self._peek().text == "]"):
            self._predicate_object_list(node)
        self._expect("punct", "]")
        return node

    def _collection_started(self) -> RdfTerm:
        """Parse a collection after '(' has been consumed."""
        items: list[RdfTerm] = []
        while not (self._peek().kind == "punct" and self._peek().text == ")"):
            items.append(self._object())
        self._next()  # ')'
        if not items:
            return RdfTerm.iri(RDF_NIL)
        head = self._fresh_bnode()
        node = head
        for i, item in enumerate(items):
            self.triples.append(Triple(node, RdfTerm.iri(RDF_FIRST), item))
            if i + 1 < len(items):
                nxt = self._fresh_bnode()
                self.triples.append(Triple(node, RdfTerm.iri(RDF_REST), nxt))
                node = nxt
            else:
                self.triples.append(Triple(node, RdfTerm.iri(RDF_REST), RdfTerm.iri(RDF_NIL)))
        return head

    def _literal(self) -> RdfTerm:
        tok = self._expect("string")
        raw = tok.text
        if raw.startswith(('"""', "'''")):
            body = raw[3:-3]
        else:
            body = raw[1:-1]
        value = _unescape(body, tok.line)
        nxt = self._peek()
        if nxt.kind == "langtag":
            self._next()
            return RdfTerm.literal(value, language=nxt.text[1:])
        if nxt.kind == "dtmark":
            self._next()
            dt_tok = self._next()
            if dt_tok.kind == "iriref":
                return RdfTerm.literal(value, datatype=self._iriref(dt_tok))
            if dt_tok.kind == "pname":
                return RdfTerm.literal(value, datatype=self._pname(dt_tok))
            raise ParseError("datatype must be an IRI", dt_tok.line)
        return RdfTerm.literal(value)

    # term resolution

    def _iriref(self, tok: _Token) -> str:
        iri = _unescape(tok.text[1:-1], tok.line)
        if self._base and not re.match(r"^[A-Za-z][A-Za-z0-9+.-]*:", iri):
            from urllib.parse import urljoin

            return urljoin(self._base, iri)
        return iri

    def _pname(self, tok: _Token) -> str:
        prefix, _, local = tok.text.partition(":")
        if prefix not in self._prefixes:
            raise ParseError(f"undeclared prefix {prefix!r}:", tok.line)
        # PN_LOCAL_ESC: backslash-escaped punctuation maps to itself
        local = re.sub(r"\\([_~.!$&'()*+,;=/?#@%-])", r"\1", local)
        return self._prefixes[prefix] + local


def parse_turtle(text: str, base: str | None = None) -> TripleSet:
    """Parse a Turtle document, preserving statement order."""
    return _TurtleParser(text, base=base).parse()


def parse_rdf(text: str, content_type: str) -> TripleSet:
    """Dispatch on a SPARQL response content type; Turtle is the fallback."""
    ct = content_type.split(";")[0].strip().lower()
    if ct in ("application/n-triples", "text/plain"):
        return parse_ntriples(text)
    return parse_turtle(text)
