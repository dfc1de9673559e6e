"""Running the classifier over datasets and aggregating the results.

Per-example classification runs on a worker pool; matrix accumulation is an
order-independent reduction, and persisted result order always follows the
dataset (positives, then negatives).
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Protocol

from .classifier import PARSE_INVALID, ClassificationResult, Verdict
from .dataset import ClassDataset, LabeledExample, content_hash
from .metrics import (
    CONVENTION_NOTE,
    POSITIVE,
    AggregateMetrics,
    ClassMetrics,
    ConfusionMatrix,
    class_metrics,
    macro_aggregate,
)
from .store import (
    RunStore,
    aggregate_from_json,
    aggregate_to_json,
    class_metrics_from_json,
    class_metrics_to_json,
    matrix_to_json,
    result_to_json,
)

logger = logging.getLogger(__name__)


class Classifier(Protocol):
    def classify(self, spec, example: LabeledExample) -> ClassificationResult: ...


@dataclass
class ClassEvaluation:
    """Everything evaluate_class produced for one dataset."""

    dataset: ClassDataset
    matrix: ConfusionMatrix
    results: list[ClassificationResult]
    errors: list[dict] = field(default_factory=list)


def evaluate_class(classifier: Classifier, dataset: ClassDataset, max_workers: int = 4) -> ClassEvaluation:
    """Classify every example of one dataset and count the confusion matrix.

    Gold-positive predicted-positive is a TP, gold-positive predicted-negative
    an FN, gold-negative predicted-negative a TN, gold-negative
    predicted-positive an FP; invalid verdicts only increment the invalid
    count. Per-example classifier failures land in the error list instead of
    aborting the class.
    """
    if not dataset.positives or not dataset.negatives:
        raise ValueError("dataset needs at least one positive and one negative example")
    examples = dataset.examples
    outcomes: list[ClassificationResult | Exception] = [None] * len(examples)  # type: ignore[list-item]

    def work(index: int) -> None:
        try:
            outcomes[index] = classifier.classify(dataset.spec, examples[index])
        except Exception as exc:  # noqa: BLE001 - isolated per example by design
            outcomes[index] = exc

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(work, range(len(examples))))
    else:
        for i in range(len(examples)):
            work(i)

    tp = fp = fn = tn = invalid = 0
    results: list[ClassificationResult] = []
    errors: list[dict] = []
    for example, outcome in zip(examples, outcomes):
        if isinstance(outcome, Exception):
            logger.warning("classification of %s failed: %s", example.entity_iri, outcome)
            errors.append({"entity_iri": example.entity_iri, "error": str(outcome)})
            continue
        results.append(outcome)
        if outcome.verdict is None:
            invalid += 1
        elif example.gold == POSITIVE:
            if outcome.verdict is Verdict.POSITIVE:
                tp += 1
            else:
                fn += 1
        else:
            if outcome.verdict is Verdict.NEGATIVE:
                tn += 1
            else:
                fp += 1
    return ClassEvaluation(
        dataset=dataset,
        matrix=ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn, invalid=invalid),
        results=results,
        errors=errors,
    )


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    kg_name: str
    model_id: str
    template_versions: tuple[str, str]
    per_class: dict[str, ClassMetrics]
    aggregate: AggregateMetrics
    failed_classes: list[dict]
    started_at: str
    finished_at: str


def compute_run_id(
    kg_name: str,
    model_id: str,
    template_versions: tuple[str, str],
    datasets: list[ClassDataset],
) -> str:
    """Deterministic run id from the run's actual inputs, so a rerun with the
    same inputs lands in the same directory."""
    material = "\x1f".join(
        [kg_name, model_id, *template_versions]
        + sorted(content_hash(d) for d in datasets)
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()[:12]


def summary_to_json(summary: RunSummary) -> dict:
    return {
        "run_id": summary.run_id,
        "kg_name": summary.kg_name,
        "model_id": summary.model_id,
        "template_versions": list(summary.template_versions),
        "per_class": {
            iri: class_metrics_to_json(m) for iri, m in sorted(summary.per_class.items())
        },
        **aggregate_to_json(summary.aggregate),
        "failed_classes": summary.failed_classes,
        "convention_note": CONVENTION_NOTE,
        "started_at": summary.started_at,
        "finished_at": summary.finished_at,
    }


def summary_from_json(data: dict) -> RunSummary:
    return RunSummary(
        run_id=data["run_id"],
        kg_name=data["kg_name"],
        model_id=data["model_id"],
        template_versions=tuple(data["template_versions"]),
        per_class={iri: class_metrics_from_json(m) for iri, m in data["per_class"].items()},
        aggregate=aggregate_from_json(data),
        failed_classes=data.get("failed_classes", []),
        started_at=data.get("started_at", ""),
        finished_at=data.get("finished_at", ""),
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def run_evaluation(
    datasets: list[ClassDataset],
    classifier: Classifier,
    store: RunStore,
    kg_name: str,
    model_id: str,
    template_versions: tuple[str, str],
    run_id: str | None = None,
    max_workers: int = 4,
) -> RunSummary:
    """Evaluate every dataset, persist the run directory, return the summary.

    Classes that fail outright are listed in ``failed_classes`` rather than
    silently dropped; the run succeeds if at least one class completes.
    """
    if not datasets:
        raise ValueError("datasets must be non-empty")
    run_id = run_id or compute_run_id(kg_name, model_id, template_versions, datasets)
    started_at = _now()

    per_class: dict[str, ClassMetrics] = {}
    failed: list[dict] = []
    dataset_hashes: dict[str, str] = {}
    for dataset in datasets:
        class_iri = dataset.spec.class_iri
        dataset_hashes[class_iri] = content_hash(dataset)
        try:
            evaluation = evaluate_class(classifier, dataset, max_workers=max_workers)
            metrics = class_metrics(evaluation.matrix)
        except Exception as exc:  # noqa: BLE001 - partial-failure tolerance
            logger.error("class %s failed: %s", class_iri, exc)
            failed.append({"class_iri": class_iri, "error": str(exc)})
            continue
        per_class[class_iri] = metrics
        described = {e.entity_iri: e for e in dataset.examples}
        store.write_class_results(
            run_id,
            class_iri,
            {
                "class_iri": class_iri,
                "class_label": dataset.spec.label,
                "superclass_iri": dataset.spec.superclass_iri,
                "definition": dataset.spec.definition,
                "kg_name": dataset.kg_name,
                "matrix": matrix_to_json(evaluation.matrix),
                "results": [
                    result_to_json(
                        r,
                        gold=described[r.entity_iri].gold,
                        entity_label=described[r.entity_iri].label,
                        description=described[r.entity_iri].description,
                    )
                    for r in evaluation.results
                ],
                "errors": evaluation.errors,
            },
        )

    if not per_class:
        raise RuntimeError(f"every class failed: {failed}")

    summary = RunSummary(
        run_id=run_id,
        kg_name=kg_name,
        model_id=model_id,
        template_versions=template_versions,
        per_class=per_class,
        aggregate=macro_aggregate(per_class),
        failed_classes=failed,
        started_at=started_at,
        finished_at=_now(),
    )
    store.write_summary(run_id, summary_to_json(summary))
    store.write_manifest(
        run_id,
        {
            "run_id": run_id,
            "kg_name": kg_name,
            "model_id": model_id,
            "template_versions": list(template_versions),
            "n_classes": len(per_class),
            "dataset_hashes": dataset_hashes,
            "convention_note": CONVENTION_NOTE,
            "started_at": started_at,
            "finished_at": summary.finished_at,
        },
    )
    return summary
