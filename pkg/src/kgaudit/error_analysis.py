"""Human triage of KG-vs-classifier disagreements.

Disagreements are extracted from a persisted run with full reviewing context
(definition, description, rationale). Human annotations -- a verdict plus an
error cause -- are appended to a per-run log; the current state is always
reconstructable by replaying that log, so restarts lose nothing. On top of
the annotations sit the agreement statistics: pairwise Cohen's kappa of the
human against the KG and against the classifier, and the error-cause
breakdown with the KG-attributed share.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .metrics import NEGATIVE, POSITIVE, KappaResult, kappa_from_pairs
from .store import RunStore

CAUSE_MISSING_DATA = "missing_data"
CAUSE_MISSING_RELATION = "missing_relation"
CAUSE_INCORRECT_RELATION = "incorrect_relation"
CAUSE_INCORRECT_REASONING = "incorrect_reasoning"

# Closed enumeration; extending it requires a schema version bump.
CAUSES = (
    CAUSE_MISSING_DATA,
    CAUSE_MISSING_RELATION,
    CAUSE_INCORRECT_RELATION,
    CAUSE_INCORRECT_REASONING,
)

# Causes that attribute the disagreement to the knowledge graph itself.
KG_ATTRIBUTED_CAUSES = (CAUSE_MISSING_RELATION, CAUSE_INCORRECT_RELATION)

ANNOTATION_SCHEMA_VERSION = 1


class ErrorAnalysisError(Exception):
    pass


class UnknownRecord(ErrorAnalysisError):
    pass


class InvalidCause(ErrorAnalysisError):
    pass


class InvalidVerdict(ErrorAnalysisError):
    pass


@dataclass(frozen=True)
class DisagreementRecord:
    """One example where the KG's gold label and the classifier's verdict
    differ, with everything a reviewer needs to judge it."""

    record_id: str
    run_id: str
    class_iri: str
    class_label: str
    entity_iri: str
    entity_label: str
    gold: str
    predicted: str
    rationale: str
    class_definition: str
    entity_description: str

    def __post_init__(self) -> None:
        if self.gold == self.predicted:
            raise ValueError("a disagreement record requires gold != predicted")


def record_id_for(run_id: str, class_iri: str, entity_iri: str) -> str:
    """Content-hash id so re-extraction is idempotent."""
    material = f"{run_id}|{class_iri}|{entity_iri}"
    return hashlib.sha256(material.encode("utf-8")).hexdigest()[:16]


def extract_disagreements(store: RunStore, run_id: str) -> list[DisagreementRecord]:
    """Every valid-verdict example of the run where prediction differs from
    gold, in class then dataset order."""
    records: list[DisagreementRecord] = []
    for class_payload in store.load_class_results(run_id):
        class_iri = class_payload["class_iri"]
        for result in class_payload["results"]:
            verdict = result.get("verdict")
            if verdict is None:
                continue
            if verdict == result["gold"]:
                continue
            records.append(
                DisagreementRecord(
                    record_id=record_id_for(run_id, class_iri, result["entity_iri"]),
                    run_id=run_id,
                    class_iri=class_iri,
                    class_label=class_payload.get("class_label", ""),
                    entity_iri=result["entity_iri"],
                    entity_label=result.get("entity_label", ""),
                    gold=result["gold"],
                    predicted=verdict,
                    rationale=result.get("rationale", ""),
                    class_definition=class_payload.get("definition", ""),
                    entity_description=result.get("description", ""),
                )
            )
    return records


@dataclass(frozen=True)
class ErrorAnnotation:
    record_id: str
    annotator_id: str
    human_verdict: str
    cause: str
    note: str | None
    annotated_at: str

    def to_json(self) -> dict:
        return {
            "schema_version": ANNOTATION_SCHEMA_VERSION,
            "record_id": self.record_id,
            "annotator_id": self.annotator_id,
            "human_verdict": self.human_verdict,
            "cause": self.cause,
            "note": self.note,
            "annotated_at": self.annotated_at,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ErrorAnnotation":
        return cls(
            record_id=data["record_id"],
            annotator_id=data["annotator_id"],
            human_verdict=data["human_verdict"],
            cause=data["cause"],
            note=data.get("note"),
            annotated_at=data["annotated_at"],
        )


class AnnotationStore:
    """Append-only annotation log for one run plus a compacted state file.

    The log is the source of truth: current state is its replay, with the
    latest annotation per (record, annotator) winning. Writes are serialized
    through a lock (single-writer discipline).
    """

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.log_path = self.run_dir / "annotations.log"
        self.state_path = self.run_dir / "annotations.json"
        self._write_lock = threading.Lock()

    def history(self) -> list[ErrorAnnotation]:
        if not self.log_path.exists():
            return []
        annotations = []
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    annotations.append(ErrorAnnotation.from_json(json.loads(line)))
        return annotations

    def current(self) -> dict[tuple[str, str], ErrorAnnotation]:
        """Latest annotation per (record_id, annotator_id), from log replay."""
        state: dict[tuple[str, str], ErrorAnnotation] = {}
        for annotation in self.history():
            state[(annotation.record_id, annotation.annotator_id)] = annotation
        return state

    def current_for_record(self, record_id: str) -> list[ErrorAnnotation]:
        return [a for (rid, _), a in sorted(self.current().items()) if rid == record_id]

    def record(
        self,
        record_id: str,
        annotator_id: str,
        human_verdict: str,
        cause: str,
        note: str | None = None,
        known_record_ids: set[str] | None = None,
    ) -> ErrorAnnotation:
        """Validate, append to the log, and refresh the compacted state file.

        A later submission by the same annotator for the same record
        overwrites the current state; the log retains the history.
        """
        if human_verdict not in (POSITIVE, NEGATIVE):
            raise InvalidVerdict(f"human_verdict must be positive/negative, got {human_verdict!r}")
        if cause not in CAUSES:
            raise InvalidCause(f"cause must be one of {CAUSES}, got {cause!r}")
        if known_record_ids is not None and record_id not in known_record_ids:
            raise UnknownRecord(f"no disagreement record {record_id!r} in this run")
        annotation = ErrorAnnotation(
            record_id=record_id,
            annotator_id=annotator_id,
            human_verdict=human_verdict,
            cause=cause,
            note=note,
            annotated_at=datetime.now(timezone.utc).isoformat(),
        )
        with self._write_lock:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(annotation.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            self._write_state()
        return annotation

    def _write_state(self) -> None:
        state = [a.to_json() for _, a in sorted(self.current().items())]
        tmp = self.state_path.with_suffix(f".tmp{os.getpid()}-{uuid.uuid4().hex[:8]}")
        tmp.write_text(
            json.dumps(state, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, self.state_path)


def record_annotation(
    store: AnnotationStore,
    record: DisagreementRecord,
    annotator_id: str,
    human_verdict: str,
    cause: str,
    note: str | None = None,
) -> ErrorAnnotation:
    return store.record(
        record_id=record.record_id,
        annotator_id=annotator_id,
        human_verdict=human_verdict,
        cause=cause,
        note=note,
    )


# ------------------------------------------------------------------ analytics


def pairwise_kappa(
    records: dict[str, DisagreementRecord] | list[DisagreementRecord],
    annotations: list[ErrorAnnotation],
    against: str,
) -> KappaResult:
    """Cohen's kappa between the human verdicts and either the KG gold labels
    (``against="kg"``) or the classifier verdicts (``against="llm"``).

    Degenerate marginals (expected agreement 1) report kappa 0 with the
    degenerate flag set.
    """
    if against not in ("kg", "llm"):
        raise ValueError(f"against must be 'kg' or 'llm', got {against!r}")
    if not annotations:
        raise ValueError("at least one annotation is required")
    by_id = records if isinstance(records, dict) else {r.record_id: r for r in records}
    pairs = []
    for annotation in annotations:
        record = by_id.get(annotation.record_id)
        if record is None:
            raise UnknownRecord(f"annotation references unknown record {annotation.record_id!r}")
        other = record.gold if against == "kg" else record.predicted
        pairs.append((annotation.human_verdict, other))
    return kappa_from_pairs(pairs)


def _pct(count: int, total: int) -> float:
    """Percentage to one decimal, half-up, as rendered in reports."""
    if total == 0:
        return 0.0
    raw = Decimal(count) * 100 / Decimal(total)
    return float(raw.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class CauseBreakdown:
    total: int
    counts: dict[str, int]
    percentages: dict[str, float]
    kg_attributed_pct: float


def cause_breakdown(annotations: list[ErrorAnnotation]) -> CauseBreakdown:
    """Counts and one-decimal percentages per cause.

    The KG-attributed share is the sum of the two rounded percentages for
    missing and incorrect relations, matching how such shares are quoted.
    """
    counts = {cause: 0 for cause in CAUSES}
    for annotation in annotations:
        counts[annotation.cause] += 1
    total = sum(counts.values())
    percentages = {cause: _pct(count, total) for cause, count in counts.items()}
    kg_attributed = round(sum(percentages[c] for c in KG_ATTRIBUTED_CAUSES), 1)
    return CauseBreakdown(
        total=total,
        counts=counts,
        percentages=percentages,
        kg_attributed_pct=kg_attributed,
    )


def _kappa_json(result: KappaResult | None, reason: str | None = None) -> dict | None:
    if result is None:
        return {"value": None, "reason": reason or "no annotations"}
    return {"value": result.value, "degenerate": result.degenerate}


def error_report(store: RunStore, run_id: str) -> dict:
    """The error-analysis half of a run report, recomputed from the current
    annotations: N / FP / FN, pairwise kappas, and the cause breakdown."""
    records = {r.record_id: r for r in extract_disagreements(store, run_id)}
    summary = store.load_summary(run_id)
    pooled_matrix = summary["pooled"]["matrix"]
    annotation_store = AnnotationStore(store.run_dir(run_id))
    current = list(annotation_store.current().values())
    current = [a for a in current if a.record_id in records]
    annotators = sorted({a.annotator_id for a in current})

    per_annotator = {}
    for annotator_id in annotators:
        own = [a for a in current if a.annotator_id == annotator_id]
        per_annotator[annotator_id] = {
            "n_annotated": len(own),
            "human_kg_kappa": _kappa_json(pairwise_kappa(records, own, "kg")),
            "human_llm_kappa": _kappa_json(pairwise_kappa(records, own, "llm")),
        }

    human_kg = _kappa_json(pairwise_kappa(records, current, "kg")) if current else _kappa_json(None)
    human_llm = _kappa_json(pairwise_kappa(records, current, "llm")) if current else _kappa_json(None)

    human_human = None
    if len(annotators) >= 2:
        by_annotator = {
            aid: {a.record_id: a for a in current if a.annotator_id == aid} for aid in annotators
        }
        first, second = annotators[0], annotators[1]
        shared = sorted(set(by_annotator[first]) & set(by_annotator[second]))
        if shared:
            pairs = [
                (by_annotator[first][rid].human_verdict, by_annotator[second][rid].human_verdict)
                for rid in shared
            ]
            human_human = _kappa_json(kappa_from_pairs(pairs))

    breakdown = cause_breakdown(current)
    return {
        "run_id": run_id,
        "n": len(records),
        "fp": pooled_matrix["fp"],
        "fn": pooled_matrix["fn"],
        "annotated": len({a.record_id for a in current}),
        "human_kg_kappa": human_kg,
        "human_llm_kappa": human_llm,
        "human_human_kappa": human_human,
        "per_annotator": per_annotator,
        "cause_counts": breakdown.counts,
        "cause_percentages": breakdown.percentages,
        "kg_attributed_pct": breakdown.kg_attributed_pct,
    }
