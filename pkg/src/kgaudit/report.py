"""Rendering run summaries and error analyses as tables.

The CLI and service format here but never recompute: every number comes from
the evaluator or error-analysis modules. Formats: aligned text, CSV, and
Markdown.
"""

from __future__ import annotations

import csv
import io

from .metrics import kappa_band

FORMATS = ("text", "csv", "md")


def _fmt(value, decimals: int = 3) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{decimals}f}"
    return str(value)


def _render_rows(headers: list[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)
        return buffer.getvalue().rstrip("\n")
    if fmt == "md":
        lines = [
            "| " + " | ".join(headers) + " |",
            "| " + " | ".join("---" for _ in headers) + " |",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines)
    if fmt == "text":
        widths = [len(h) for h in headers]
        for row in rows:
            for i, cell in enumerate(row):
                widths[i] = max(widths[i], len(cell))
        def line(cells: list[str]) -> str:
            return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()
        out = [line(headers), line(["-" * w for w in widths])]
        out += [line(row) for row in rows]
        return "\n".join(out)
    raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")


def render_metrics_table(summary: dict, fmt: str = "text") -> str:
    """Per-class rows plus macro and pooled aggregates, Table-1 shaped."""
    headers = ["kg", "model", "scope", "acc", "auc", "f1", "kappa", "agreement"]
    rows: list[list[str]] = []
    kg = summary.get("kg_name", "")
    model = summary.get("model_id", "")
    for class_iri, metrics in sorted(summary.get("per_class", {}).items()):
        rows.append(
            [
                kg,
                model,
                class_iri,
                _fmt(metrics["accuracy"]),
                _fmt(metrics["auc"]),
                _fmt(metrics["f1_macro"]),
                _fmt(metrics["kappa"]),
                metrics.get("kappa_band", kappa_band(metrics["kappa"])),
            ]
        )
    macro = summary.get("macro")
    if macro:
        rows.append(
            [
                kg,
                model,
                "MACRO",
                _fmt(macro["accuracy"]),
                _fmt(macro["auc"]),
                _fmt(macro["f1_macro"]),
                _fmt(macro["kappa"]),
                kappa_band(macro["kappa"]),
            ]
        )
    pooled = summary.get("pooled")
    if pooled:
        rows.append(
            [
                kg,
                model,
                "POOLED",
                _fmt(pooled["accuracy"]),
                _fmt(pooled["auc"]),
                _fmt(pooled["f1_macro"]),
                _fmt(pooled["kappa"]),
                pooled.get("kappa_band", kappa_band(pooled["kappa"])),
            ]
        )
    table = _render_rows(headers, rows, fmt)
    note = summary.get("convention_note")
    if note and fmt == "text":
        return f"{table}\n\nNote: {note}"
    return table


def _kappa_cell(entry: dict | None) -> str:
    if not entry or entry.get("value") is None:
        return "-"
    cell = _fmt(entry["value"])
    if entry.get("degenerate"):
        cell += " (degenerate)"
    return cell


def render_error_table(report: dict, fmt: str = "text") -> str:
    """The error-analysis table: N/FP/FN, pairwise kappas, cause breakdown."""
    headers = [
        "n",
        "fp",
        "fn",
        "annotated",
        "human-kg kappa",
        "human-llm kappa",
        "missing data",
        "missing relation",
        "incorrect relation",
        "incorrect reasoning",
        "kg-attributed",
    ]
    counts = report["cause_counts"]
    pct = report["cause_percentages"]

    def cause_cell(cause: str) -> str:
        return f"{counts[cause]} ({pct[cause]:.1f}%)"

    row = [
        str(report["n"]),
        str(report["fp"]),
        str(report["fn"]),
        str(report["annotated"]),
        _kappa_cell(report.get("human_kg_kappa")),
        _kappa_cell(report.get("human_llm_kappa")),
        cause_cell("missing_data"),
        cause_cell("missing_relation"),
        cause_cell("incorrect_relation"),
        cause_cell("incorrect_reasoning"),
        f"{report['kg_attributed_pct']:.1f}%",
    ]
    return _render_rows(headers, [row], fmt)


def render_usage(report, fmt: str = "text") -> str:
    headers = ["model", "calls", "cached", "input tokens", "output tokens", "est. cost"]
    rows = []
    for model_id, usage in sorted(report.per_model.items()):
        rows.append(
            [
                model_id,
                str(usage.calls),
                str(usage.cached_calls),
                str(usage.input_tokens),
                str(usage.output_tokens),
                "unknown" if usage.cost is None else f"${usage.cost:.4f}",
            ]
        )
    total_cost = report.cost
    rows.append(
        [
            "TOTAL",
            str(sum(u.calls for u in report.per_model.values())),
            str(sum(u.cached_calls for u in report.per_model.values())),
            str(report.input_tokens),
            str(report.output_tokens),
            "unknown" if total_cost is None else f"${total_cost:.4f}",
        ]
    )
    return _render_rows(headers, rows, fmt)
