"""File-backed persistence for evaluation runs.

Layout under the data directory:

    runs/<run_id>/manifest.json            run header
    runs/<run_id>/summary.json             per-class + aggregate metrics
    runs/<run_id>/classes/<slug>.json      every classification result
    runs/<run_id>/annotations.log          append-only annotation events
    runs/<run_id>/annotations.json         compacted current annotations

Run results are immutable once written; only annotations ever change.
Class-result files deliberately contain no timestamps or cache telemetry so
that a warm-cache rerun reproduces them byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import uuid
from dataclasses import dataclass
from pathlib import Path

from .classifier import ClassificationResult, Verdict
from .metrics import (
    AggregateMetrics,
    ClassMetrics,
    ConfusionMatrix,
    MacroMetrics,
    kappa_band,
)

RUN_SCHEMA_VERSION = 1


class StoreError(Exception):
    pass


class UnknownRunError(StoreError):
    pass


def class_slug(class_iri: str) -> str:
    return hashlib.sha256(class_iri.encode("utf-8")).hexdigest()[:16]


def _atomic_write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}-{uuid.uuid4().hex[:8]}")
    tmp.write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)


def matrix_to_json(matrix: ConfusionMatrix) -> dict:
    return {
        "tp": matrix.tp,
        "fp": matrix.fp,
        "fn": matrix.fn,
        "tn": matrix.tn,
        "invalid": matrix.invalid,
    }


def matrix_from_json(data: dict) -> ConfusionMatrix:
    return ConfusionMatrix(
        tp=data["tp"], fp=data["fp"], fn=data["fn"], tn=data["tn"], invalid=data.get("invalid", 0)
    )


def class_metrics_to_json(metrics: ClassMetrics) -> dict:
    return {
        "accuracy": metrics.accuracy,
        "auc": metrics.auc,
        "f1_macro": metrics.f1_macro,
        "kappa": metrics.kappa,
        "kappa_band": kappa_band(metrics.kappa),
        "matrix": matrix_to_json(metrics.matrix),
    }


def class_metrics_from_json(data: dict) -> ClassMetrics:
    return ClassMetrics(
        accuracy=data["accuracy"],
        auc=data["auc"],
        f1_macro=data["f1_macro"],
        kappa=data["kappa"],
        matrix=matrix_from_json(data["matrix"]),
    )


def aggregate_to_json(aggregate: AggregateMetrics) -> dict:
    macro = aggregate.macro
    return {
        "macro": {
            "accuracy": macro.accuracy,
            "auc": macro.auc,
            "f1_macro": macro.f1_macro,
            "kappa": macro.kappa,
            "n_classes": macro.n_classes,
        },
        "pooled": class_metrics_to_json(aggregate.pooled),
    }


def aggregate_from_json(data: dict) -> AggregateMetrics:
    macro = data["macro"]
    return AggregateMetrics(
        macro=MacroMetrics(
            accuracy=macro["accuracy"],
            auc=macro["auc"],
            f1_macro=macro["f1_macro"],
            kappa=macro["kappa"],
            n_classes=macro["n_classes"],
        ),
        pooled=class_metrics_from_json(data["pooled"]),
    )


def result_to_json(result: ClassificationResult, gold: str, entity_label: str, description: str) -> dict:
    return {
        "entity_iri": result.entity_iri,
        "entity_label": entity_label,
        "description": description,
        "gold": gold,
        "verdict": result.verdict.value if result.verdict else None,
        "parse_status": result.parse_status,
        "rationale": result.rationale,
        "raw_rationale_completion": result.raw_rationale_completion,
        "raw_answer_completion": result.raw_answer_completion,
        "model_id": result.model_id,
        "template_versions": list(result.template_versions),
        "flags": list(result.flags),
    }


@dataclass(frozen=True)
class RunHeader:
    """What list_runs returns per run; ``corrupt`` marks unreadable manifests."""

    run_id: str
    kg_name: str = ""
    model_id: str = ""
    started_at: str = ""
    finished_at: str = ""
    n_classes: int = 0
    corrupt: bool = False


class RunStore:
    """Reads and writes the run directory layout."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.runs_dir = self.data_dir / "runs"

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "manifest.json").exists()

    def require(self, run_id: str) -> None:
        if not self.exists(run_id):
            raise UnknownRunError(f"no run {run_id!r} under {self.runs_dir}")

    # -------------------------------------------------------------- writing

    def write_manifest(self, run_id: str, payload: dict) -> None:
        payload = {"schema_version": RUN_SCHEMA_VERSION, **payload}
        _atomic_write_json(self.run_dir(run_id) / "manifest.json", payload)

    def write_summary(self, run_id: str, payload: dict) -> None:
        payload = {"schema_version": RUN_SCHEMA_VERSION, **payload}
        _atomic_write_json(self.run_dir(run_id) / "summary.json", payload)

    def write_class_results(self, run_id: str, class_iri: str, payload: dict) -> None:
        payload = {"schema_version": RUN_SCHEMA_VERSION, **payload}
        path = self.run_dir(run_id) / "classes" / f"{class_slug(class_iri)}.json"
        _atomic_write_json(path, payload)

    # -------------------------------------------------------------- reading

    def load_manifest(self, run_id: str) -> dict:
        self.require(run_id)
        return json.loads((self.run_dir(run_id) / "manifest.json").read_text(encoding="utf-8"))

    def load_summary(self, run_id: str) -> dict:
        self.require(run_id)
        path = self.run_dir(run_id) / "summary.json"
        if not path.exists():
            raise StoreError(f"run {run_id!r} has no summary")
        return json.loads(path.read_text(encoding="utf-8"))

    def load_class_results(self, run_id: str) -> list[dict]:
        self.require(run_id)
        classes_dir = self.run_dir(run_id) / "classes"
        if not classes_dir.exists():
            return []
        payloads = []
        for path in sorted(classes_dir.glob("*.json")):
            payloads.append(json.loads(path.read_text(encoding="utf-8")))
        return sorted(payloads, key=lambda p: p.get("class_iri", ""))

    def list_runs(self) -> list[RunHeader]:
        """All runs, newest first; unreadable manifests are flagged, not
        hidden, and never break the listing."""
        if not self.runs_dir.exists():
            return []
        headers: list[RunHeader] = []
        for run_dir in sorted(p for p in self.runs_dir.iterdir() if p.is_dir()):
            manifest_path = run_dir / "manifest.json"
            if not manifest_path.exists():
                continue
            try:
                manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
                headers.append(
                    RunHeader(
                        run_id=manifest["run_id"],
                        kg_name=manifest.get("kg_name", ""),
                        model_id=manifest.get("model_id", ""),
                        started_at=manifest.get("started_at", ""),
                        finished_at=manifest.get("finished_at", ""),
                        n_classes=manifest.get("n_classes", 0),
                    )
                )
            except (ValueError, KeyError):
                headers.append(RunHeader(run_id=run_dir.name, corrupt=True))
        headers.sort(key=lambda h: (h.started_at, h.run_id), reverse=True)
        return headers


def verdict_from_json(value: str | None) -> Verdict | None:
    return Verdict(value) if value else None
