from __future__ import annotations

import pytest

from kgaudit.classifier import ClassificationResult, Verdict
from kgaudit.dataset import ClassDataset, ClassSpec, LabeledExample
from kgaudit.kg_access import KgClient, KgEndpoint
from kgaudit.rdf import InMemoryGraph, RdfTerm, Triple, triple

from sparql_server import MiniSparqlServer

EX = "http://example.org/"
INSTANCE_OF = EX + "instanceOf"
SUBCLASS_OF = EX + "subClassOf"
LABEL = "http://www.w3.org/2000/01/rdf-schema#label"


def make_endpoint(url: str, **overrides) -> KgEndpoint:
    settings = dict(
        name="test-kg",
        sparql_url=url,
        instance_of_property=INSTANCE_OF,
        subclass_of_property=SUBCLASS_OF,
        label_property=LABEL,
        default_language="en",
        request_timeout=5.0,
        max_retries=2,
    )
    settings.update(overrides)
    return KgEndpoint(**settings)


def labeled(iri: str, text: str, lang: str = "en") -> Triple:
    return Triple(RdfTerm.iri(iri), RdfTerm.iri(LABEL), RdfTerm.literal(text, language=lang))


def toy_graph() -> InMemoryGraph:
    """Two-level class tree with labeled entities.

    widget (5 direct instances w1..w5)
      gadget subClassOf widget (2 instances g1, g2)
    thing: widget subClassOf thing, extra instances t1..t3
    """
    g = InMemoryGraph()
    g.add(triple(EX + "widget", SUBCLASS_OF, EX + "thing"))
    g.add(triple(EX + "gadget", SUBCLASS_OF, EX + "widget"))
    g.add(labeled(EX + "widget", "widget"))
    g.add(labeled(EX + "gadget", "gadget"))
    g.add(labeled(EX + "thing", "thing"))
    for i in range(1, 6):
        g.add(triple(EX + f"w{i}", INSTANCE_OF, EX + "widget"))
        g.add(labeled(EX + f"w{i}", f"widget {i}"))
    for i in (1, 2):
        g.add(triple(EX + f"g{i}", INSTANCE_OF, EX + "gadget"))
        g.add(labeled(EX + f"g{i}", f"gadget {i}"))
    for i in (1, 2, 3):
        g.add(triple(EX + f"t{i}", INSTANCE_OF, EX + "thing"))
        g.add(labeled(EX + f"t{i}", f"thing {i}"))
    return g


@pytest.fixture
def serve_graph():
    """Start MiniSparqlServer instances that are shut down after the test."""
    servers: list[MiniSparqlServer] = []

    def start(graph: InMemoryGraph) -> MiniSparqlServer:
        server = MiniSparqlServer(graph).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()


def client_for(server: MiniSparqlServer, **endpoint_overrides) -> KgClient:
    return KgClient(make_endpoint(server.url, **endpoint_overrides), backoff_base=0.01)


# ----------------------------------------------------------- classifier stubs


class StubClassifier:
    """Deterministic classifier for evaluator tests: entity IRI -> verdict.

    ``verdicts`` values are "positive" / "negative" / "invalid"; missing
    entities fall back to the entity's place in ``default``.
    """

    def __init__(self, verdicts: dict[str, str] | None = None, default: str = "positive"):
        self.verdicts = verdicts or {}
        self.default = default
        self.calls: list[str] = []

    def classify(self, spec: ClassSpec, example: LabeledExample) -> ClassificationResult:
        self.calls.append(example.entity_iri)
        word = self.verdicts.get(example.entity_iri, self.default)
        if word == "error":
            raise RuntimeError(f"scripted failure for {example.entity_iri}")
        verdict = None if word == "invalid" else Verdict(word)
        return ClassificationResult(
            class_iri=spec.class_iri,
            entity_iri=example.entity_iri,
            rationale=f"stub rationale for {example.label}",
            verdict=verdict,
            raw_rationale_completion=f"stub rationale for {example.label}",
            raw_answer_completion=word,
            model_id="stub",
            template_versions=("stub", "stub"),
            parse_status="invalid" if verdict is None else "ok",
        )


def make_example(iri: str, gold: str, label: str | None = None, description: str | None = None) -> LabeledExample:
    return LabeledExample(
        entity_iri=iri,
        label=label or iri.rsplit("/", 1)[-1],
        description=description or f"a description of {iri.rsplit('/', 1)[-1]}",
        gold=gold,
    )


def make_dataset(
    class_iri: str = EX + "widget",
    superclass_iri: str = EX + "thing",
    label: str = "widget",
    definition: str = "an artifact produced for testing purposes",
    n_pos: int = 5,
    n_neg: int = 5,
    kg_name: str = "toy",
    seed: int = 7,
) -> ClassDataset:
    spec = ClassSpec(
        class_iri=class_iri, superclass_iri=superclass_iri, label=label, definition=definition
    )
    prefix = class_iri.rsplit("/", 1)[-1]
    positives = tuple(
        make_example(f"{EX}{prefix}-pos{i}", "positive") for i in range(1, n_pos + 1)
    )
    negatives = tuple(
        make_example(f"{EX}{prefix}-neg{i}", "negative") for i in range(1, n_neg + 1)
    )
    return ClassDataset(
        spec=spec,
        positives=positives,
        negatives=negatives,
        sampling_seed=seed,
        kg_name=kg_name,
        created_at="2024-02-24T00:00:00+00:00",
    )
