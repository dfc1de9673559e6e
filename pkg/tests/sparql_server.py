"""A local SPARQL endpoint for tests, backed by an in-memory graph.

Speaks the SPARQL 1.1 protocol over HTTP (GET and form POST) and evaluates
the query subset the toolkit emits: SELECT over basic graph patterns of one
or two triple patterns (with optional ``*`` property paths), FILTER with
``!=`` / isIRI / isLiteral, DISTINCT, LIMIT, constant projections, and
DESCRIBE with an optional LIMIT. The evaluator works directly on the triple
set and parses the incoming query text itself, independent of the client's
query builders.

Failure injection: ``fail_next(n, status)`` makes the next n requests fail,
for retry/backoff tests.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from kgaudit.rdf import InMemoryGraph, RdfTerm, TermKind, Triple


class QueryParseError(ValueError):
    pass


# ---------------------------------------------------------------- evaluation


_TOKEN = re.compile(
    r"""
      (?P<iri><[^>]*>\*?)
    | (?P<var>\?[A-Za-z_]\w*)
    | (?P<lit>"(?:[^"\\]|\\.)*"(?:@[\w-]+|\^\^<[^>]*>)?)
    | (?P<kw>FILTER\b)
    | (?P<dot>\.)
    """,
    re.VERBOSE | re.IGNORECASE,
)


def _parse_term(token: str) -> tuple[str, object]:
    """Returns ("var", name) or ("term", RdfTerm) or ("path", iri)."""
    if token.startswith("?"):
        return "var", token[1:]
    if token.startswith("<"):
        if token.endswith(">*"):
            return "path", token[1:-2]
        return "term", RdfTerm.iri(token[1:-1])
    m = re.match(r'^"((?:[^"\\]|\\.)*)"(?:@([\w-]+)|\^\^<([^>]*)>)?$', token)
    if not m:
        raise QueryParseError(f"bad term {token!r}")
    value = m.group(1).replace('\\"', '"').replace("\\\\", "\\")
    return "term", RdfTerm.literal(value, language=m.group(2), datatype=m.group(3))


def _scan_balanced(text: str, start: int) -> tuple[str, int]:
    """Content of a balanced (...) group starting at ``start`` (an '(')."""
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "(":
            depth += 1
        elif text[i] == ")":
            depth -= 1
            if depth == 0:
                return text[start + 1 : i], i + 1
    raise QueryParseError("unbalanced parentheses in FILTER")


class _Filter:
    def __init__(self, expression: str):
        self.clauses = [c.strip() for c in expression.split("&&")]

    def accepts(self, row: dict[str, RdfTerm]) -> bool:
        for clause in self.clauses:
            m = re.match(r"^\?(\w+)\s*(!=|=)\s*\?(\w+)$", clause)
            if m:
                left, op, right = row.get(m.group(1)), m.group(2), row.get(m.group(3))
                equal = left == right
                if (op == "!=" and equal) or (op == "=" and not equal):
                    return False
                continue
            m = re.match(r"^isLiteral\(\s*\?(\w+)\s*\)$", clause, re.IGNORECASE)
            if m:
                term = row.get(m.group(1))
                if term is None or term.kind is not TermKind.LITERAL:
                    return False
                continue
            m = re.match(r"^isIRI\(\s*\?(\w+)\s*\)$", clause, re.IGNORECASE)
            if m:
                term = row.get(m.group(1))
                if term is None or term.kind is not TermKind.IRI:
                    return False
                continue
            raise QueryParseError(f"unsupported FILTER clause {clause!r}")
        return True


class _SelectQuery:
    def __init__(self, query: str):
        m = re.match(
            r"(?is)^\s*SELECT\s+(?P<distinct>DISTINCT\s+)?(?P<proj>.+?)\s+WHERE\s*\{",
            query,
        )
        if not m:
            raise QueryParseError("not a SELECT query")
        self.distinct = bool(m.group("distinct"))
        self.projection = m.group("proj").strip()
        open_brace = query.index("{", m.end() - 1)
        if "}" not in query:
            raise QueryParseError("unterminated group graph pattern")
        close_brace = query.rindex("}")
        body = query[open_brace + 1 : close_brace]
        tail = query[close_brace + 1 :]
        limit_match = re.search(r"(?i)LIMIT\s+(\d+)", tail)
        self.limit = int(limit_match.group(1)) if limit_match else None

        self.patterns: list[tuple] = []
        self.filters: list[_Filter] = []
        self._parse_body(body)
        self.variables, self.constants = self._parse_projection(self.projection)

    def _parse_body(self, body: str) -> None:
        terms: list[str] = []
        pos = 0
        while pos < len(body):
            m = _TOKEN.search(body, pos)
            if not m:
                trailing = body[pos:].strip()
                if trailing:
                    raise QueryParseError(f"unsupported syntax near {trailing[:40]!r}")
                break
            if m.group("kw"):
                paren = body.index("(", m.end())
                expression, pos = _scan_balanced(body, paren)
                self.filters.append(_Filter(expression.strip()))
                continue
            if m.group("dot"):
                pos = m.end()
                continue
            terms.append(m.group(0))
            pos = m.end()
        if len(terms) % 3 != 0:
            raise QueryParseError(f"triple patterns malformed ({len(terms)} terms)")
        for i in range(0, len(terms), 3):
            self.patterns.append(tuple(_parse_term(t) for t in terms[i : i + 3]))

    @staticmethod
    def _parse_projection(projection: str) -> tuple[list[str], dict[str, RdfTerm]]:
        variables: list[str] = []
        constants: dict[str, RdfTerm] = {}
        for m in re.finditer(
            r"\(\s*(?P<value>\d+|\"(?:[^\"\\]|\\.)*\")\s+AS\s+\?(?P<alias>\w+)\s*\)|\?(?P<var>\w+)",
            projection,
            re.IGNORECASE,
        ):
            if m.group("var"):
                variables.append(m.group("var"))
            else:
                raw = m.group("value")
                if raw.startswith('"'):
                    constants[m.group("alias")] = RdfTerm.literal(raw[1:-1])
                else:
                    constants[m.group("alias")] = RdfTerm.literal(
                        raw, datatype="http://www.w3.org/2001/XMLSchema#integer"
                    )
                variables.append(m.group("alias"))
        return variables, constants


def _path_closure(graph: InMemoryGraph, prop: str, start: str, forward: bool) -> list[str]:
    """Reflexive-transitive closure along ``prop`` edges from ``start``."""
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for t in graph.triples:
            if t.property.value != prop:
                continue
            if forward and t.subject.value == node and not t.object.is_literal:
                nxt = t.object.value
            elif not forward and not t.object.is_literal and t.object.value == node:
                nxt = t.subject.value
            else:
                continue
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return sorted(seen)


def _match_concrete(pattern_entry: tuple[str, object], term: RdfTerm, row: dict) -> dict | None:
    kind, value = pattern_entry
    if kind == "var":
        bound = row.get(value)
        if bound is None:
            new = dict(row)
            new[value] = term
            return new
        return row if bound == term else None
    return row if value == term else None


def _evaluate_bgp(graph: InMemoryGraph, patterns: list[tuple], rows: list[dict]) -> list[dict]:
    for pattern in patterns:
        s_entry, p_entry, o_entry = pattern
        next_rows: list[dict] = []
        if p_entry[0] == "path":
            prop = p_entry[1]
            for row in rows:
                s_bound = row.get(s_entry[1]) if s_entry[0] == "var" else s_entry[1]
                o_bound = row.get(o_entry[1]) if o_entry[0] == "var" else o_entry[1]
                if isinstance(o_bound, RdfTerm):
                    for node in _path_closure(graph, prop, o_bound.value, forward=False):
                        out = _match_concrete(s_entry, RdfTerm.iri(node) if not node.startswith("_:") else RdfTerm.blank(node), row)
                        if out is not None:
                            next_rows.append(out)
                elif isinstance(s_bound, RdfTerm):
                    for node in _path_closure(graph, prop, s_bound.value, forward=True):
                        out = _match_concrete(o_entry, RdfTerm.iri(node), row)
                        if out is not None:
                            next_rows.append(out)
                else:
                    raise QueryParseError("property path with both ends unbound is unsupported")
        else:
            for row in rows:
                for t in graph.triples:
                    out = _match_concrete(s_entry, t.subject, row)
                    if out is None:
                        continue
                    out = _match_concrete(p_entry, t.property, out)
                    if out is None:
                        continue
                    out = _match_concrete(o_entry, t.object, out)
                    if out is not None:
                        next_rows.append(out)
        rows = next_rows
    return rows


def evaluate_select(graph: InMemoryGraph, query: str) -> tuple[list[str], list[dict[str, RdfTerm]]]:
    parsed = _SelectQuery(query)
    rows = _evaluate_bgp(graph, parsed.patterns, [{}])
    rows = [row for row in rows if all(f.accepts(row) for f in parsed.filters)]
    projected: list[dict[str, RdfTerm]] = []
    for row in rows:
        out: dict[str, RdfTerm] = {}
        for var in parsed.variables:
            if var in parsed.constants:
                out[var] = parsed.constants[var]
            elif var in row:
                out[var] = row[var]
        projected.append(out)
    if parsed.distinct:
        unique: list[dict[str, RdfTerm]] = []
        seen: set[tuple] = set()
        for row in projected:
            key = tuple(sorted((k, v.kind.value, v.value, v.datatype, v.language) for k, v in row.items()))
            if key not in seen:
                seen.add(key)
                unique.append(row)
        projected = unique
    if parsed.limit is not None:
        projected = projected[: parsed.limit]
    return parsed.variables, projected


def evaluate_describe(graph: InMemoryGraph, query: str) -> list[Triple]:
    m = re.match(r"(?is)^\s*DESCRIBE\s+<([^>]*)>\s*(?:LIMIT\s+(\d+))?\s*$", query)
    if not m:
        raise QueryParseError("not a DESCRIBE query this server supports")
    iri, limit = m.group(1), m.group(2)
    triples = [t for t in graph.triples if t.subject.value == iri]
    if limit is not None:
        triples = triples[: int(limit)]
    return triples


# ---------------------------------------------------------------------- http


def _term_to_json(term: RdfTerm) -> dict:
    if term.kind is TermKind.IRI:
        return {"type": "uri", "value": term.value}
    if term.kind is TermKind.BLANK:
        return {"type": "bnode", "value": term.value}
    out = {"type": "literal", "value": term.value}
    if term.language:
        out["xml:lang"] = term.language
    if term.datatype:
        out["datatype"] = term.datatype
    return out


def _to_turtle(triples: list[Triple]) -> str:
    # Plain full-IRI Turtle; statement order preserved.
    lines = ["# turtle serialization"]
    for t in triples:
        lines.append(f"{t.subject.n3()} {t.property.n3()} {t.object.n3()} .")
    return "\n".join(lines) + "\n"


class MiniSparqlServer:
    def __init__(self, graph: InMemoryGraph):
        self.graph = graph
        self.request_count = 0
        self._fail_remaining = 0
        self._fail_status = 500
        self._lock = threading.Lock()

        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence
                pass

            def _query_text(self) -> str | None:
                if self.command == "GET":
                    params = parse_qs(urlparse(self.path).query)
                    values = params.get("query")
                    return values[0] if values else None
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length).decode("utf-8")
                params = parse_qs(body)
                values = params.get("query")
                return values[0] if values else None

            def _respond(self, status: int, content_type: str, body: bytes) -> None:
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _handle(self) -> None:
                with server._lock:
                    server.request_count += 1
                    if server._fail_remaining > 0:
                        server._fail_remaining -= 1
                        self._respond(
                            server._fail_status, "text/plain", b"injected failure"
                        )
                        return
                query = self._query_text()
                if not query:
                    self._respond(400, "text/plain", b"missing query")
                    return
                accept = self.headers.get("Accept", "")
                try:
                    if re.match(r"(?is)^\s*DESCRIBE\b", query):
                        triples = evaluate_describe(server.graph, query)
                        if "text/turtle" in accept and "application/n-triples" not in accept:
                            self._respond(200, "text/turtle", _to_turtle(triples).encode())
                        else:
                            body = "".join(t.n3() + "\n" for t in triples)
                            self._respond(200, "application/n-triples", body.encode())
                        return
                    variables, rows = evaluate_select(server.graph, query)
                    payload = {
                        "head": {"vars": variables},
                        "results": {
                            "bindings": [
                                {var: _term_to_json(term) for var, term in row.items()}
                                for row in rows
                            ]
                        },
                    }
                    self._respond(
                        200, "application/sparql-results+json", json.dumps(payload).encode()
                    )
                except QueryParseError as exc:
                    self._respond(400, "text/plain", str(exc).encode())

            def do_GET(self):
                self._handle()

            def do_POST(self):
                self._handle()

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.02), daemon=True
        )

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/sparql"

    def fail_next(self, n: int, status: int = 500) -> None:
        with self._lock:
            self._fail_remaining = n
            self._fail_status = status

    def start(self) -> "MiniSparqlServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
