"""Natural-language descriptions of entities and classes.

Two routes, mirroring how the evaluation datasets are built: the lead summary
of an entity's Wikipedia page, or a TSV serialization of its RDF neighborhood
rewritten into prose by an LLM. Every description carries provenance (a source
URL or the hash of the triples it was derived from).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import uuid
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import quote

import requests

from .classifier import PromptTemplate, Substitution, builtin_template, instantiate
from .gateway import LlmGateway, ModelConfig
from .kg_access import KgClient
from .rdf import RdfTerm, TermKind, TripleSet

logger = logging.getLogger(__name__)

SOURCE_WIKIPEDIA = "wikipedia_summary"
SOURCE_TSV = "tsv_triples"
SOURCE_LLM = "llm_rewrite_of_triples"
SOURCE_MANUAL = "manual"

FLAG_EMPTY = "empty"
FLAG_LOW_INFORMATION = "low_information"


class VerbalizerError(Exception):
    pass


class NoSitelink(VerbalizerError):
    """The sitelink resolver knows no Wikipedia page for the entity."""


class PageFetchFailed(VerbalizerError):
    """The summary endpoint failed or the page does not exist."""


@dataclass(frozen=True)
class Verbalization:
    """A description of one subject, with where it came from."""

    subject_iri: str
    text: str
    source: str
    provenance: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text and FLAG_EMPTY not in self.flags:
            raise ValueError("empty verbalization must carry the empty flag")
        if not self.provenance:
            raise ValueError("provenance must never be empty")


# ------------------------------------------------------------------------ tsv


def _escape_cell(value: str) -> str:
    return (
        value.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _render_term(term: RdfTerm, label_resolver: Callable[[str], str | None]) -> str:
    if term.kind is TermKind.IRI:
        label = label_resolver(term.value)
        return label if label else term.value
    if term.kind is TermKind.BLANK:
        return f"_:{term.value}"
    return term.value


def serialize_tsv(triples: TripleSet, label_resolver: Callable[[str], str | None]) -> str:
    """One line per triple: subject, property, object as tab-separated cells,
    each rendered as a label when resolvable, else the IRI or lexical form.
    Input order is preserved; tabs and newlines inside cells are escaped."""
    lines = []
    for t in triples:
        cells = (
            _render_term(t.subject, label_resolver),
            _render_term(t.property, label_resolver),
            _render_term(t.object, label_resolver),
        )
        lines.append("\t".join(_escape_cell(c) for c in cells))
    return "\n".join(lines)


def label_resolver_from_client(client: KgClient) -> Callable[[str], str | None]:
    """A resolver that answers None (so the IRI is kept) when the endpoint has
    no proper label, with a per-call memo."""
    memo: dict[str, str | None] = {}

    def resolve(iri: str) -> str | None:
        if iri not in memo:
            label = client.get_label(iri)
            memo[iri] = None if label.fallback else label.text
        return memo[iri]

    return resolve


# ------------------------------------------------------------------ wikipedia


_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text).strip().lower()


@dataclass(frozen=True)
class SummaryPage:
    title: str
    text: str
    url: str
    fetched_at: float
    from_cache: bool
    cache_age: float


class SitelinkResolver(Protocol):
    def __call__(self, entity_iri: str) -> str | None: ...


class WikipediaSummaries:
    """Lead summaries from the Wikipedia REST API, cached on disk by title.

    ``fetch`` is injectable for tests: a callable taking the page title and
    returning the decoded summary JSON (it should raise PageFetchFailed on
    failure).
    """

    def __init__(
        self,
        cache_dir: str | Path,
        fetch: Callable[[str], dict] | None = None,
        lang: str = "en",
        request_timeout: float = 15.0,
        session: requests.Session | None = None,
    ):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.lang = lang
        self._fetch = fetch or self._fetch_http
        self._timeout = request_timeout
        self._session = session or requests.Session()
        self._write_lock = threading.Lock()

    def page_url(self, title: str) -> str:
        return f"https://{self.lang}.wikipedia.org/api/rest_v1/page/summary/{quote(title, safe='')}"

    def _fetch_http(self, title: str) -> dict:
        url = self.page_url(title)
        try:
            response = self._session.get(
                url, timeout=self._timeout, headers={"User-Agent": "kgaudit/0.1"}
            )
        except requests.RequestException as exc:
            raise PageFetchFailed(f"fetching {url} failed: {exc}") from exc
        if response.status_code != 200:
            raise PageFetchFailed(f"{url} returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise PageFetchFailed(f"{url} returned non-JSON body") from exc

    def _cache_path(self, title: str) -> Path:
        digest = hashlib.sha256(f"{self.lang}:{title}".encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.json"

    def summary(self, title: str) -> SummaryPage:
        path = self._cache_path(title)
        now = time.time()
        if path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            return SummaryPage(
                title=entry["title"],
                text=entry["text"],
                url=entry["url"],
                fetched_at=entry["fetched_at"],
                from_cache=True,
                cache_age=max(0.0, now - entry["fetched_at"]),
            )
        payload = self._fetch(title)
        text = _WS_RE.sub(" ", payload.get("extract", "") or "").strip()
        entry = {"title": title, "lang": self.lang, "text": text, "url": self.page_url(title), "fetched_at": now}
        with self._write_lock:
            tmp = path.with_suffix(f".tmp{os.getpid()}-{uuid.uuid4().hex[:8]}")
            tmp.write_text(json.dumps(entry, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, path)
        return SummaryPage(
            title=title, text=text, url=entry["url"], fetched_at=now, from_cache=False, cache_age=0.0
        )


def wikipedia_summary(
    entity_iri: str,
    sitelink_resolver: SitelinkResolver,
    summaries: WikipediaSummaries,
    entity_label: str | None = None,
) -> Verbalization:
    """The lead summary of the entity's Wikipedia page.

    Summaries that are merely the entity's label are kept but flagged
    low_information.
    """
    title = sitelink_resolver(entity_iri)
    if not title:
        raise NoSitelink(f"no Wikipedia sitelink for {entity_iri}")
    page = summaries.summary(title)
    flags: tuple[str, ...] = ()
    if not page.text:
        flags = (FLAG_EMPTY,)
    elif entity_label and _normalize(page.text) == _normalize(entity_label):
        flags = (FLAG_LOW_INFORMATION,)
    return Verbalization(
        subject_iri=entity_iri,
        text=page.text,
        source=SOURCE_WIKIPEDIA,
        provenance=page.url,
        flags=flags,
    )


# ------------------------------------------------------------------ llm prose


def verbalization_template() -> PromptTemplate:
    return builtin_template("verbalize_v1")


def verbalize_rdf(
    gateway: LlmGateway,
    model_config: ModelConfig,
    tsv_text: str,
    subject_label: str,
    subject_iri: str = "",
    run_id: str | None = None,
) -> Verbalization:
    """Rewrite a TSV triple serialization into prose with an LLM.

    Provenance records the hash of the TSV input and the prompt version.
    """
    if not tsv_text:
        raise ValueError("tsv_text must be non-empty")
    template = verbalization_template()
    prompt = instantiate(template, Substitution({"label": subject_label, "facts": tsv_text}))
    completion = gateway.complete(model_config, prompt, run_id=run_id)
    text = completion.text.strip()
    tsv_hash = hashlib.sha256(tsv_text.encode("utf-8")).hexdigest()
    return Verbalization(
        subject_iri=subject_iri or subject_label,
        text=text,
        source=SOURCE_LLM,
        provenance=f"tsv:sha256:{tsv_hash};prompt:{template.name}:{template.version}",
        flags=() if text else (FLAG_EMPTY,),
    )


# ----------------------------------------------------------------- describers


def make_wikipedia_describer(
    sitelink_resolver: SitelinkResolver, summaries: WikipediaSummaries
) -> Callable[[str, str], str | None]:
    """Describer for dataset building: Wikipedia summary or None."""

    def describe(iri: str, label: str) -> str | None:
        try:
            verbalization = wikipedia_summary(iri, sitelink_resolver, summaries, entity_label=label)
        except VerbalizerError as exc:
            logger.info("no Wikipedia summary for %s: %s", iri, exc)
            return None
        return verbalization.text or None

    return describe


def make_rdf_describer(
    client: KgClient,
    gateway: LlmGateway,
    model_config: ModelConfig,
    describe_limit: int = 20,
    run_id: str | None = None,
) -> Callable[[str, str], str | None]:
    """Describer for dataset building: DESCRIBE triples -> TSV -> LLM prose."""
    resolver = label_resolver_from_client(client)

    def describe(iri: str, label: str) -> str | None:
        triples = client.describe_entity(iri, limit=describe_limit)
        if not triples:
            return None
        tsv = serialize_tsv(triples, resolver)
        verbalization = verbalize_rdf(
            gateway, model_config, tsv, subject_label=label, subject_iri=iri, run_id=run_id
        )
        return verbalization.text or None

    return describe
