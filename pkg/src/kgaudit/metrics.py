"""Confusion matrices and agreement metrics (accuracy, balanced AUC, macro F1,
Cohen's kappa) shared by the evaluator and the error-analysis reports.

Conventions, pinned once here:

* Counting follows the standard lettering: a gold-positive example predicted
  negative is a false negative, a gold-negative example predicted positive is
  a false positive. Reports carry a note to that effect (see
  ``CONVENTION_NOTE``).
* AUC is balanced accuracy, (TPR + TNR) / 2 --- the only AUC a single hard
  decision threshold admits.
* Macro F1 averages the F1 of the positive and the negative class.
* A rate whose gold class is empty is reported as absent (``None``) and macro
  averages skip it.
* kappa is 0 when the expected agreement is 1 (degenerate marginals).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

CONVENTION_NOTE = (
    "Counts use the standard convention: gold-positive predicted-negative = FN, "
    "gold-negative predicted-positive = FP."
)

POSITIVE = "positive"
NEGATIVE = "negative"


class EmptyMatrixError(ValueError):
    """No valid-verdict examples: no metric is defined."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Per-class TP/FP/FN/TN counts; ``invalid`` tallies unparseable verdicts,
    which never enter the four cells."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    invalid: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn", "invalid"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def valid_total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def total(self) -> int:
        return self.valid_total + self.invalid

    @property
    def gold_positives(self) -> int:
        return self.tp + self.fn

    @property
    def gold_negatives(self) -> int:
        return self.tn + self.fp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
            invalid=self.invalid + other.invalid,
        )


def _require_nonempty(matrix: ConfusionMatrix) -> None:
    if matrix.valid_total == 0:
        raise EmptyMatrixError("confusion matrix has no valid-verdict examples")


def accuracy(matrix: ConfusionMatrix) -> float:
    _require_nonempty(matrix)
    return (matrix.tp + matrix.tn) / matrix.valid_total


def auc(matrix: ConfusionMatrix) -> float | None:
    """Balanced accuracy; absent when either gold class is empty."""
    _require_nonempty(matrix)
    if matrix.gold_positives == 0 or matrix.gold_negatives == 0:
        return None
    tpr = matrix.tp / matrix.gold_positives
    tnr = matrix.tn / matrix.gold_negatives
    return (tpr + tnr) / 2


def f1_macro(matrix: ConfusionMatrix) -> float | None:
    """Mean of the positive-class and negative-class F1.

    A class that occurs in neither gold nor predictions has no F1 and is
    skipped; if both classes are undefined the result is absent.
    """
    _require_nonempty(matrix)
    per_class: list[float] = []
    pos_denom = 2 * matrix.tp + matrix.fp + matrix.fn
    if pos_denom > 0:
        per_class.append(2 * matrix.tp / pos_denom)
    neg_denom = 2 * matrix.tn + matrix.fn + matrix.fp
    if neg_denom > 0:
        per_class.append(2 * matrix.tn / neg_denom)
    if not per_class:
        return None
    return sum(per_class) / len(per_class)


def _kappa_from_counts(n_pp: int, n_pn: int, n_np: int, n_nn: int) -> tuple[float, bool]:
    """Cohen's kappa for a 2x2 agreement table between two binary labelers.

    ``n_pp`` counts pairs where both said positive, ``n_pn`` first positive /
    second negative, and so on. Returns ``(kappa, degenerate)`` where
    degenerate means expected agreement was 1 and kappa is pinned to 0.
    """
    n = n_pp + n_pn + n_np + n_nn
    if n == 0:
        raise EmptyMatrixError("no label pairs")
    p_o = (n_pp + n_nn) / n
    first_pos = n_pp + n_pn
    second_pos = n_pp + n_np
    p_e = (first_pos * second_pos + (n - first_pos) * (n - second_pos)) / (n * n)
    if p_e == 1.0:
        return 0.0, True
    return (p_o - p_e) / (1.0 - p_e), False


def kappa(matrix: ConfusionMatrix) -> float:
    """Cohen's kappa between the gold labels and the predictions."""
    _require_nonempty(matrix)
    value, _ = _kappa_from_counts(matrix.tp, matrix.fn, matrix.fp, matrix.tn)
    return value


@dataclass(frozen=True)
class KappaResult:
    value: float
    degenerate: bool = False


def kappa_from_pairs(pairs: Iterable[tuple[str, str]]) -> KappaResult:
    """Cohen's kappa over raw (labeler_a, labeler_b) pairs of
    positive/negative strings. Shares the matrix implementation."""
    n_pp = n_pn = n_np = n_nn = 0
    for a, b in pairs:
        if a == POSITIVE and b == POSITIVE:
            n_pp += 1
        elif a == POSITIVE and b == NEGATIVE:
            n_pn += 1
        elif a == NEGATIVE and b == POSITIVE:
            n_np += 1
        elif a == NEGATIVE and b == NEGATIVE:
            n_nn += 1
        else:
            raise ValueError(f"labels must be positive/negative, got {(a, b)!r}")
    value, degenerate = _kappa_from_counts(n_pp, n_pn, n_np, n_nn)
    return KappaResult(value=value, degenerate=degenerate)


def kappa_band(value: float) -> str:
    """Agreement wording for a kappa value (none through almost perfect)."""
    if value <= 0:
        return "none"
    if value <= 0.20:
        return "slight"
    if value <= 0.40:
        return "fair"
    if value <= 0.60:
        return "moderate"
    if value <= 0.80:
        return "substantial"
    return "almost perfect"


@dataclass(frozen=True)
class ClassMetrics:
    """All four metrics for one class, with the matrix they came from."""

    accuracy: float
    auc: float | None
    f1_macro: float | None
    kappa: float
    matrix: ConfusionMatrix


@dataclass(frozen=True)
class MacroMetrics:
    """Unweighted means across classes; absent per-class values are skipped."""

    accuracy: float
    auc: float | None
    f1_macro: float | None
    kappa: float
    n_classes: int


@dataclass(frozen=True)
class AggregateMetrics:
    macro: MacroMetrics
    pooled: ClassMetrics


def class_metrics(matrix: ConfusionMatrix) -> ClassMetrics:
    return ClassMetrics(
        accuracy=accuracy(matrix),
        auc=auc(matrix),
        f1_macro=f1_macro(matrix),
        kappa=kappa(matrix),
        matrix=matrix,
    )


def _mean_defined(values: Iterable[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def macro_aggregate(per_class: Mapping[str, ClassMetrics]) -> AggregateMetrics:
    """Unweighted means across classes plus metrics of the summed matrix."""
    if not per_class:
        raise ValueError("per_class must be non-empty")
    items = list(per_class.values())
    macro = MacroMetrics(
        accuracy=sum(m.accuracy for m in items) / len(items),
        auc=_mean_defined(m.auc for m in items),
        f1_macro=_mean_defined(m.f1_macro for m in items),
        kappa=sum(m.kappa for m in items) / len(items),
        n_classes=len(items),
    )
    pooled_matrix = ConfusionMatrix()
    for m in items:
        pooled_matrix = pooled_matrix + m.matrix
    return AggregateMetrics(macro=macro, pooled=class_metrics(pooled_matrix))
