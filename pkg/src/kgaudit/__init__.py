"""kgaudit: audit class-membership relations in RDF knowledge graphs.

Samples (class, entity) pairs from SPARQL endpoints, classifies them with a
zero-shot chain-of-thought LLM classifier built from natural-language class
definitions, measures KG/classifier agreement, and supports human triage of
the disagreements.
"""

__version__ = "0.1.0"

from .classifier import (
    ClassificationResult,
    CotClassifier,
    PromptTemplate,
    Substitution,
    TemplatePair,
    Verdict,
    default_templates,
    instantiate,
    parse_verdict,
)
from .dataset import ClassDataset, ClassSpec, LabeledExample, load_dataset, save_dataset
from .gateway import Completion, LlmGateway, ModelConfig
from .kg_access import ExtensionResult, KgClient, KgEndpoint, compute_extension
from .metrics import ClassMetrics, ConfusionMatrix, accuracy, auc, f1_macro, kappa
from .rdf import InMemoryGraph, RdfTerm, TermKind, Triple
from .verbalizer import Verbalization, serialize_tsv, verbalize_rdf, wikipedia_summary

__all__ = [
    "ClassDataset",
    "ClassMetrics",
    "ClassSpec",
    "ClassificationResult",
    "Completion",
    "ConfusionMatrix",
    "CotClassifier",
    "ExtensionResult",
    "InMemoryGraph",
    "KgClient",
    "KgEndpoint",
    "LabeledExample",
    "LlmGateway",
    "ModelConfig",
    "PromptTemplate",
    "RdfTerm",
    "Substitution",
    "TemplatePair",
    "TermKind",
    "Triple",
    "Verbalization",
    "Verdict",
    "accuracy",
    "auc",
    "compute_extension",
    "default_templates",
    "f1_macro",
    "instantiate",
    "kappa",
    "load_dataset",
    "parse_verdict",
    "save_dataset",
    "serialize_tsv",
    "verbalize_rdf",
    "wikipedia_summary",
]
