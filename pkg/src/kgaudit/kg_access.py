"""SPARQL endpoint access: labels, DESCRIBE, neighborhoods, class extensions.

All network operations retry transient failures with exponential backoff and
surface typed errors instead of crashing. A per-endpoint semaphore caps
concurrent requests out of politeness to public endpoints.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import requests

from .rdf import InMemoryGraph, RdfTerm, TermKind, Triple, TripleSet, local_name
from .rdf_parse import ParseError, parse_rdf

logger = logging.getLogger(__name__)

USER_AGENT = "kgaudit/0.1 (knowledge-graph audit toolkit)"

SELECT_ACCEPT = "application/sparql-results+json"
DESCRIBE_ACCEPT = "application/n-triples, text/turtle;q=0.9, text/plain;q=0.5"

# Queries longer than this go over POST to dodge URL length limits.
_GET_QUERY_LIMIT = 2000


class KgAccessError(Exception):
    """Base class for knowledge-graph access failures."""


class EndpointUnreachable(KgAccessError):
    """Network failure or server error persisting through all retries."""


class MalformedResponse(KgAccessError):
    """The endpoint answered with something we cannot parse."""


class QueryRejected(KgAccessError):
    """The endpoint rejected the query outright (HTTP 4xx)."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


@dataclass(frozen=True)
class KgEndpoint:
    """Connection settings and the three relation IRIs for one knowledge graph.

    ``max_retries`` is the number of re-attempts after the first try.
    """

    name: str
    sparql_url: str
    instance_of_property: str
    subclass_of_property: str
    label_property: str
    default_language: str = "en"
    request_timeout: float = 30.0
    max_retries: int = 3
    max_concurrent_requests: int = 4

    def __post_init__(self) -> None:
        props = (self.instance_of_property, self.subclass_of_property, self.label_property)
        if any(not p for p in props):
            raise ValueError("endpoint property IRIs must be non-empty")
        if len(set(props)) != 3:
            raise ValueError("instance-of, subclass-of, and label properties must be distinct")


@dataclass(frozen=True)
class EntityLabel:
    """A resolved label; ``fallback`` marks a local-name stand-in."""

    text: str
    language: str | None = None
    fallback: bool = False


@dataclass(frozen=True)
class ExtensionResult:
    """Members of a class extension plus how the traversal ended.

    ``reached_fixpoint`` is False when the subclass frontier was still growing
    at ``max_depth`` (the members are returned anyway, flagged here).
    """

    members: frozenset[str]
    reached_fixpoint: bool
    depth_used: int | None = None

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item: str) -> bool:
        return item in self.members


class ClassGraphView(Protocol):
    """The two lookups extension traversal needs, however they are backed."""

    def direct_instances(self, class_iri: str) -> set[str]: ...

    def direct_subclasses(self, class_iri: str) -> set[str]: ...


@dataclass
class InMemoryClassView:
    """ClassGraphView over an in-memory toy graph."""

    graph: InMemoryGraph
    instance_of_property: str
    subclass_of_property: str

    def direct_instances(self, class_iri: str) -> set[str]:
        return self.graph.subjects_where(self.instance_of_property, class_iri)

    def direct_subclasses(self, class_iri: str) -> set[str]:
        return self.graph.subjects_where(self.subclass_of_property, class_iri)


def compute_extension(view: ClassGraphView, class_iri: str, max_depth: int = 10) -> ExtensionResult:
    """Level-by-level class extension: direct instances plus instances of
    transitive subclasses, down to ``max_depth`` subclass levels.

    Cycles in the subclass graph are handled with a visited set; traversal
    terminates on any input.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    members = set(view.direct_instances(class_iri))
    visited = {class_iri}
    frontier = {class_iri}
    depth_used = 0
    for depth in range(1, max_depth + 1):
        next_frontier: set[str] = set()
        for cls in frontier:
            for sub in view.direct_subclasses(cls):
                if sub not in visited:
                    visited.add(sub)
                    next_frontier.add(sub)
        if not next_frontier:
            return ExtensionResult(frozenset(members), reached_fixpoint=True, depth_used=depth_used)
        for sub in next_frontier:
            members |= view.direct_instances(sub)
        frontier = next_frontier
        depth_used = depth
    # Depth budget exhausted: fixpoint reached only if the frontier is sterile.
    remaining = any(
        sub not in visited for cls in frontier for sub in view.direct_subclasses(cls)
    )
    if remaining:
        logger.warning(
            "extension of %s truncated at depth %d before reaching a fixpoint", class_iri, max_depth
        )
    return ExtensionResult(frozenset(members), reached_fixpoint=not remaining, depth_used=depth_used)


def _term_from_json(binding: dict) -> RdfTerm:
    """SPARQL JSON results term -> RdfTerm."""
    kind = binding.get("type")
    value = binding.get("value", "")
    if kind == "uri":
        return RdfTerm.iri(value)
    if kind == "bnode":
        return RdfTerm.blank(value)
    if kind in ("literal", "typed-literal"):
        return RdfTerm.literal(
            value,
            datatype=binding.get("datatype"),
            language=binding.get("xml:lang"),
        )
    raise MalformedResponse(f"unknown term type in SPARQL JSON results: {kind!r}")


class KgClient:
    """SPARQL 1.1 protocol client bound to one endpoint.

    Stateless per request and safe to share between worker threads; the
    endpoint's concurrency ceiling is enforced internally.
    """

    def __init__(
        self,
        endpoint: KgEndpoint,
        session: requests.Session | None = None,
        backoff_base: float = 0.5,
    ):
        self.endpoint = endpoint
        self._session = session or requests.Session()
        self._backoff_base = backoff_base
        self._semaphore = threading.BoundedSemaphore(endpoint.max_concurrent_requests)
        self._property_paths_supported: bool | None = None

    # ------------------------------------------------------------------ http

    def _request(self, query: str, accept: str) -> requests.Response:
        headers = {"Accept": accept, "User-Agent": USER_AGENT}
        attempts = self.endpoint.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                delay = self._backoff_base * (2 ** (attempt - 1))
                time.sleep(delay + random.uniform(0, delay * 0.1))
            try:
                with self._semaphore:
                    if len(query) <= _GET_QUERY_LIMIT:
                        response = self._session.get(
                            self.endpoint.sparql_url,
                            params={"query": query},
                            headers=headers,
                            timeout=self.endpoint.request_timeout,
                        )
                    else:
                        response = self._session.post(
                            self.endpoint.sparql_url,
                            data={"query": query},
                            headers=headers,
                            timeout=self.endpoint.request_timeout,
                        )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("request to %s failed (attempt %d): %s", self.endpoint.name, attempt + 1, exc)
                continue
            if response.status_code == 200:
                return response
            if 400 <= response.status_code < 500 and response.status_code != 429:
                raise QueryRejected(
                    f"{self.endpoint.name} rejected the query: HTTP {response.status_code}",
                    status_code=response.status_code,
                )
            last_error = requests.HTTPError(f"HTTP {response.status_code}")
            logger.warning(
                "endpoint %s returned HTTP %d (attempt %d)",
                self.endpoint.name,
                response.status_code,
                attempt + 1,
            )
        raise EndpointUnreachable(
            f"{self.endpoint.name} unreachable after {attempts} attempts: {last_error}"
        )

    # ------------------------------------------------------------ operations

    def run_select(self, query: str) -> list[dict[str, RdfTerm]]:
        """Run a SELECT query; rows map variable names to terms."""
        response = self._request(query, SELECT_ACCEPT)
        try:
            payload = response.json()
            bindings = payload["results"]["bindings"]
            return [{var: _term_from_json(term) for var, term in row.items()} for row in bindings]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(f"bad SELECT response from {self.endpoint.name}: {exc}") from exc

    def get_label(self, entity: str) -> EntityLabel:
        """One label for ``entity``: preferred language first, ties broken
        lexicographically, local name as a flagged fallback."""
        query = (
            f"SELECT ?label WHERE {{ <{entity}> <{self.endpoint.label_property}> ?label . "
            "FILTER(isLiteral(?label)) }"
        )
        rows = self.run_select(query)
        candidates = [row["label"] for row in rows if "label" in row and row["label"].is_literal]
        if not candidates:
            return EntityLabel(text=local_name(entity), fallback=True)
        chosen = pick_label(candidates, self.endpoint.default_language)
        return EntityLabel(text=chosen.value, language=chosen.language, fallback=False)

    def describe_entity(self, entity: str, limit: int) -> TripleSet:
        """Up to ``limit`` triples from DESCRIBE, in endpoint response order."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        query = f"DESCRIBE <{entity}> LIMIT {limit}"
        response = self._request(query, DESCRIBE_ACCEPT)
        content_type = response.headers.get("Content-Type", "text/turtle")
        try:
            triples = parse_rdf(response.text, content_type)
        except (ParseError, ValueError) as exc:
            raise MalformedResponse(
                f"unparseable DESCRIBE response from {self.endpoint.name}: {exc}"
            ) from exc
        return triples[:limit]

    def neighborhood(self, entity: str, limit: int) -> TripleSet:
        """Triples where ``entity`` is subject or object, deduplicated,
        truncated to ``limit``."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        out: TripleSet = []
        seen: set[Triple] = set()
        as_subject = self.run_select(f"SELECT ?p ?o WHERE {{ <{entity}> ?p ?o }} LIMIT {limit}")
        subject_term = RdfTerm.iri(entity)
        for row in as_subject:
            t = Triple(subject_term, row["p"], row["o"])
            if t not in seen:
                seen.add(t)
                out.append(t)
        as_object = self.run_select(f"SELECT ?s ?p WHERE {{ ?s ?p <{entity}> }} LIMIT {limit}")
        for row in as_object:
            t = Triple(row["s"], row["p"], RdfTerm.iri(entity))
            if t not in seen:
                seen.add(t)
                out.append(t)
        return out[:limit]

    # ClassGraphView implementation

    def direct_instances(self, class_iri: str) -> set[str]:
        rows = self.run_select(
            f"SELECT DISTINCT ?e WHERE {{ ?e <{self.endpoint.instance_of_property}> <{class_iri}> }}"
        )
        return {row["e"].value for row in rows if row["e"].kind is not TermKind.LITERAL}

    def direct_subclasses(self, class_iri: str) -> set[str]:
        rows = self.run_select(
            f"SELECT DISTINCT ?c WHERE {{ ?c <{self.endpoint.subclass_of_property}> <{class_iri}> }}"
        )
        return {row["c"].value for row in rows if row["c"].is_iri}

    def extension(self, class_iri: str, max_depth: int = 10, strategy: str = "auto") -> ExtensionResult:
        """All instances of ``class_iri``, directly or through transitive
        subclasses.

        ``strategy`` is ``property_path`` (one round trip, full closure),
        ``iterative`` (level-by-level, honors ``max_depth``), or ``auto``
        (property path with iterative fallback when the endpoint rejects it).
        """
        if strategy not in ("auto", "property_path", "iterative"):
            raise ValueError(f"unknown extension strategy: {strategy!r}")
        if strategy in ("auto", "property_path") and self._property_paths_supported is not False:
            try:
                members = self._extension_property_path(class_iri)
                self._property_paths_supported = True
                return ExtensionResult(frozenset(members), reached_fixpoint=True, depth_used=None)
            except (QueryRejected, MalformedResponse) as exc:
                if strategy == "property_path":
                    raise
                logger.info(
                    "%s does not accept property paths (%s); falling back to iterative traversal",
                    self.endpoint.name,
                    exc,
                )
                self._property_paths_supported = False
        return compute_extension(self, class_iri, max_depth=max_depth)

    def _extension_property_path(self, class_iri: str) -> set[str]:
        query = (
            "SELECT DISTINCT ?e WHERE { "
            f"?c <{self.endpoint.subclass_of_property}>* <{class_iri}> . "
            f"?e <{self.endpoint.instance_of_property}> ?c . }}"
        )
        rows = self.run_select(query)
        return {row["e"].value for row in rows if row["e"].kind is not TermKind.LITERAL}


def pick_label(candidates: Iterable[RdfTerm], preferred_language: str) -> RdfTerm:
    """Label choice: exact language match, then language-prefix match, then
    untagged, then anything; lexicographic tie-break within each tier."""
    pref = preferred_language.lower()

    def tier(term: RdfTerm) -> int:
        lang = (term.language or "").lower()
        if lang == pref:
            return 0
        if lang.startswith(pref + "-"):
            return 1
        if not lang:
            return 2
        return 3

    return min(candidates, key=lambda t: (tier(t), t.value))
