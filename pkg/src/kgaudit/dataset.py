"""Sampling audit classes and labeled example entities, and persisting them.

Sampling is seeded and portable: candidates are ordered by the SHA-256 digest
of ``"{seed}:{salt}:{iri}"`` and taken from the front, so identical inputs
produce identical datasets in any implementation of this scheme. The sampler
name is recorded in every dataset file.
"""

from __future__ import annotations

import hashlib
import json
import os
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .kg_access import KgClient
from .metrics import NEGATIVE, POSITIVE

SAMPLER_NAME = "sha256-keyed-order-v1"
DATASET_SCHEMA_VERSION = 1

FLAG_DESCRIPTION_MISSING = "description_missing"


class DatasetError(Exception):
    pass


class InsufficientClasses(DatasetError):
    pass


class InsufficientPositives(DatasetError):
    pass


class EmptyNegativePool(DatasetError):
    pass


class SchemaVersionMismatch(DatasetError):
    pass


@dataclass(frozen=True)
class ClassSpec:
    """One audited class: its IRI, a superclass, a label, and the
    natural-language intensional definition the classifier reads."""

    class_iri: str
    superclass_iri: str
    label: str
    definition: str

    def __post_init__(self) -> None:
        if self.class_iri == self.superclass_iri:
            raise ValueError("class and superclass must differ")
        if not self.definition:
            raise ValueError("definition must be non-empty")


@dataclass(frozen=True)
class LabeledExample:
    entity_iri: str
    label: str
    description: str
    gold: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.gold not in (POSITIVE, NEGATIVE):
            raise ValueError(f"gold must be positive/negative, got {self.gold!r}")
        if not self.description and FLAG_DESCRIPTION_MISSING not in self.flags:
            raise ValueError("description is empty but not flagged description_missing")

    @property
    def description_missing(self) -> bool:
        return FLAG_DESCRIPTION_MISSING in self.flags


@dataclass(frozen=True)
class ClassDataset:
    spec: ClassSpec
    positives: tuple[LabeledExample, ...]
    negatives: tuple[LabeledExample, ...]
    sampling_seed: int
    kg_name: str
    created_at: str
    sampler: str = SAMPLER_NAME
    negative_shortfall: int = 0

    def __post_init__(self) -> None:
        if any(e.gold != POSITIVE for e in self.positives):
            raise ValueError("positives must all carry gold=positive")
        if any(e.gold != NEGATIVE for e in self.negatives):
            raise ValueError("negatives must all carry gold=negative")
        overlap = {e.entity_iri for e in self.positives} & {e.entity_iri for e in self.negatives}
        if overlap:
            raise ValueError(f"entities in both positives and negatives: {sorted(overlap)}")

    @property
    def examples(self) -> tuple[LabeledExample, ...]:
        return self.positives + self.negatives


def keyed_sample(items: Iterable[str], k: int, seed: int, salt: str = "") -> list[str]:
    """The first ``k`` items under the seeded SHA-256 ordering."""
    def key(item: str) -> str:
        return hashlib.sha256(f"{seed}:{salt}:{item}".encode("utf-8")).hexdigest()

    return sorted(items, key=key)[:k]


class Describer(Protocol):
    """Anything that can produce a natural-language description for an IRI.

    Returns the description text, or None when no description is obtainable.
    """

    def __call__(self, iri: str, label: str) -> str | None: ...


def sample_classes(
    client: KgClient,
    n: int,
    seed: int,
    definition_for: Describer,
    min_instances: int = 20,
    max_depth: int = 10,
    candidate_limit: int = 500,
) -> list[ClassSpec]:
    """Sample ``n`` audit classes with superclasses.

    A candidate (class, superclass) pair is eligible when the class has a
    proper label, at least ``min_instances`` direct-or-inherited instances,
    and a retrievable definition. Candidate evaluation order is the seeded
    hash order, so the result is deterministic for a fixed endpoint state.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = client.run_select(
        "SELECT DISTINCT ?c ?d WHERE { "
        f"?c <{client.endpoint.subclass_of_property}> ?d . FILTER(?c != ?d) }} "
        f"LIMIT {candidate_limit}"
    )
    pairs = [
        (row["c"].value, row["d"].value)
        for row in rows
        if row["c"].is_iri and row["d"].is_iri
    ]
    ordered = keyed_sample([f"{c}\x1f{d}" for c, d in pairs], len(pairs), seed, salt="class")
    specs: list[ClassSpec] = []
    seen_classes: set[str] = set()
    for packed in ordered:
        class_iri, superclass_iri = packed.split("\x1f")
        if class_iri in seen_classes:
            continue
        label = client.get_label(class_iri)
        if label.fallback:
            continue
        extension = client.extension(class_iri, max_depth=max_depth)
        if len(extension) < min_instances:
            continue
        definition = definition_for(class_iri, label.text)
        if not definition:
            continue
        specs.append(
            ClassSpec(
                class_iri=class_iri,
                superclass_iri=superclass_iri,
                label=label.text,
                definition=definition,
            )
        )
        seen_classes.add(class_iri)
        if len(specs) == n:
            return specs
    raise InsufficientClasses(
        f"only {len(specs)} of {n} requested classes are eligible on {client.endpoint.name}"
    )


@dataclass(frozen=True)
class SampledExamples:
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    negative_shortfall: int


def sample_examples(
    client: KgClient,
    spec: ClassSpec,
    k: int,
    seed: int,
    max_depth: int = 10,
    positives_from: str = "full",
) -> SampledExamples:
    """``k`` positives from the class extension and up to ``k`` negatives from
    the superclass extension minus the class extension.

    Fewer negatives than ``k`` is a success with ``negative_shortfall`` set;
    an empty negative pool is an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if positives_from not in ("full", "direct"):
        raise ValueError(f"positives_from must be full or direct, got {positives_from!r}")
    ext_c: frozenset[str] | set[str]
    if positives_from == "direct":
        ext_c = client.direct_instances(spec.class_iri)
    else:
        ext_c = client.extension(spec.class_iri, max_depth=max_depth).members
    if len(ext_c) < k:
        raise InsufficientPositives(
            f"{spec.class_iri} has {len(ext_c)} instances, need {k} positives"
        )
    ext_d = client.extension(spec.superclass_iri, max_depth=max_depth).members
    pool = set(ext_d) - set(ext_c)
    if not pool:
        raise EmptyNegativePool(
            f"ext({spec.superclass_iri}) \\ ext({spec.class_iri}) is empty"
        )
    positives = keyed_sample(ext_c, k, seed, salt="pos")
    negatives = keyed_sample(pool, min(k, len(pool)), seed, salt="neg")
    return SampledExamples(
        positives=tuple(positives),
        negatives=tuple(negatives),
        negative_shortfall=max(0, k - len(negatives)),
    )


def build_dataset(
    client: KgClient,
    spec: ClassSpec,
    k: int,
    seed: int,
    describer: Describer,
    kg_name: str,
    max_depth: int = 10,
    positives_from: str = "full",
    label_for: Callable[[str], str] | None = None,
) -> ClassDataset:
    """Sample examples for ``spec`` and attach labels and descriptions.

    Entities whose description cannot be obtained are kept, flagged
    ``description_missing``, rather than dropped.
    """
    sampled = sample_examples(
        client, spec, k, seed, max_depth=max_depth, positives_from=positives_from
    )
    resolve_label = label_for or (lambda iri: client.get_label(iri).text)

    def make(iri: str, gold: str) -> LabeledExample:
        label = resolve_label(iri)
        description = describer(iri, label)
        flags: tuple[str, ...] = ()
        if not description:
            description = ""
            flags = (FLAG_DESCRIPTION_MISSING,)
        return LabeledExample(
            entity_iri=iri, label=label, description=description, gold=gold, flags=flags
        )

    return ClassDataset(
        spec=spec,
        positives=tuple(make(iri, POSITIVE) for iri in sampled.positives),
        negatives=tuple(make(iri, NEGATIVE) for iri in sampled.negatives),
        sampling_seed=seed,
        kg_name=kg_name,
        created_at=datetime.now(timezone.utc).isoformat(),
        negative_shortfall=sampled.negative_shortfall,
    )


# ------------------------------------------------------------- serialization


def _example_to_json(example: LabeledExample) -> dict:
    return {
        "entity_iri": example.entity_iri,
        "label": example.label,
        "description": example.description,
        "gold": example.gold,
        "flags": list(example.flags),
    }


def _example_from_json(data: dict) -> LabeledExample:
    return LabeledExample(
        entity_iri=data["entity_iri"],
        label=data["label"],
        description=data["description"],
        gold=data["gold"],
        flags=tuple(data.get("flags", [])),
    )


def dataset_to_json(dataset: ClassDataset) -> dict:
    return {
        "schema_version": DATASET_SCHEMA_VERSION,
        "kg_name": dataset.kg_name,
        "spec": {
            "class_iri": dataset.spec.class_iri,
            "superclass_iri": dataset.spec.superclass_iri,
            "label": dataset.spec.label,
            "definition": dataset.spec.definition,
        },
        "positives": [_example_to_json(e) for e in dataset.positives],
        "negatives": [_example_to_json(e) for e in dataset.negatives],
        "sampling_seed": dataset.sampling_seed,
        "created_at": dataset.created_at,
        "sampler": dataset.sampler,
        "negative_shortfall": dataset.negative_shortfall,
    }


def dataset_from_json(data: dict) -> ClassDataset:
    version = data.get("schema_version")
    if version != DATASET_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"dataset schema_version {version!r}, expected {DATASET_SCHEMA_VERSION}"
        )
    spec = ClassSpec(**data["spec"])
    return ClassDataset(
        spec=spec,
        positives=tuple(_example_from_json(e) for e in data["positives"]),
        negatives=tuple(_example_from_json(e) for e in data["negatives"]),
        sampling_seed=data["sampling_seed"],
        kg_name=data["kg_name"],
        created_at=data["created_at"],
        sampler=data.get("sampler", SAMPLER_NAME),
        negative_shortfall=data.get("negative_shortfall", 0),
    )


def save_dataset(dataset: ClassDataset, path: str | Path) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}-{uuid.uuid4().hex[:8]}")
    tmp.write_text(
        json.dumps(dataset_to_json(dataset), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)


def load_dataset(path: str | Path) -> ClassDataset:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return dataset_from_json(data)


def content_hash(dataset: ClassDataset) -> str:
    """Stable digest of the dataset content, ignoring creation time."""
    payload = dataset_to_json(dataset)
    payload.pop("created_at", None)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
