"""kgaudit command line: sample datasets, run classifications, report,
annotate, and serve the review UI.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from urllib.parse import unquote

import click

from . import error_analysis
from .classifier import CotClassifier
from .config import EndpointOptions, RunConfig, load_config
from .dataset import (
    ClassDataset,
    DatasetError,
    build_dataset,
    load_dataset,
    sample_classes,
    save_dataset,
)
from .error_analysis import CAUSES, AnnotationStore, error_report, extract_disagreements
from .evaluator import compute_run_id, run_evaluation
from .gateway import AuthMissing, GatewayError, LlmGateway, UnknownRun
from .kg_access import KgAccessError, KgClient
from .rdf import local_name
from .report import FORMATS, render_error_table, render_metrics_table, render_usage
from .store import RunStore, StoreError, UnknownRunError, class_slug
from .verbalizer import (
    WikipediaSummaries,
    label_resolver_from_client,
    make_rdf_describer,
    make_wikipedia_describer,
)

_RUNTIME_ERRORS = (
    DatasetError,
    GatewayError,
    KgAccessError,
    StoreError,
    error_analysis.ErrorAnalysisError,
    OSError,
    RuntimeError,
    ValueError,
)


def _fail_cleanly(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except _RUNTIME_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _config(path: str) -> RunConfig:
    return load_config(path)


def _gateway(config: RunConfig) -> LlmGateway:
    return LlmGateway(
        cache_dir=config.cache_dir,
        requests_per_minute=config.requests_per_minute,
        max_retries=config.gateway_max_retries,
    )


def _client(config: RunConfig, kg: str) -> KgClient:
    if kg not in config.endpoints:
        raise click.UsageError(f"no endpoint {kg!r} in the configuration")
    return KgClient(config.endpoints[kg])


def _sitelink_resolver(options: EndpointOptions, client: KgClient, config: RunConfig):
    kind = options.sitelinks
    if kind == "local_name":
        return lambda iri: local_name(iri) or None
    if kind.startswith("static:"):
        mapping = json.loads(Path(kind.split(":", 1)[1]).read_text(encoding="utf-8"))
        return lambda iri: mapping.get(iri)
    if kind == "sparql":

        def resolve(iri: str) -> str | None:
            rows = client.run_select(
                f"SELECT ?page WHERE {{ ?page <http://schema.org/about> <{iri}> }}"
            )
            for row in rows:
                page = row.get("page")
                if page is not None and page.is_iri and "wikipedia.org/wiki/" in page.value:
                    return unquote(page.value.rsplit("/wiki/", 1)[1])
            return None

        return resolve
    raise click.UsageError(f"unknown sitelinks resolver {kind!r}")


def _describer(config: RunConfig, kg: str, client: KgClient, gateway: LlmGateway, run_id=None):
    options = config.endpoint_options[kg]
    if options.verbalization == "wikipedia":
        summaries = WikipediaSummaries(
            cache_dir=config.cache_dir / "wikipedia" / options.wikipedia_lang,
            lang=options.wikipedia_lang,
        )
        return make_wikipedia_describer(_sitelink_resolver(options, client, config), summaries)
    if options.verbalization == "llm_rdf":
        if not options.verbalizer_model or options.verbalizer_model not in config.models:
            raise click.UsageError(
                f"endpoint {kg!r} uses llm_rdf verbalization but names no configured verbalizer_model"
            )
        model = config.models[options.verbalizer_model]
        gateway.check_credentials(model)
        return make_rdf_describer(
            client, gateway, model, describe_limit=config.sampling.describe_limit, run_id=run_id
        )
    raise click.UsageError(f"unknown verbalization {options.verbalization!r} for endpoint {kg!r}")


def _load_datasets(paths: tuple[str, ...]) -> list[ClassDataset]:
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(path.glob("*.json")))
        else:
            files.append(path)
    if not files:
        raise click.UsageError("no dataset files found")
    return [load_dataset(f) for f in files]


@click.group()
@click.version_option(package_name="kgaudit")
def main() -> None:
    """Audit class-membership relations in RDF knowledge graphs."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--kg", required=True, help="endpoint name from the configuration")
@click.option("--n", "n_classes", type=click.IntRange(min=1), default=None, help="classes to sample")
@click.option("--k", "k_examples", type=click.IntRange(min=1), default=None, help="examples per side")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="output directory for dataset files")
@_fail_cleanly
def sample(config_path, kg, n_classes, k_examples, seed, out):
    """Sample audit classes and labeled examples into dataset files."""
    config = _config(config_path)
    sampling = config.sampling
    n = n_classes or sampling.n_classes
    k = k_examples or sampling.k_examples
    seed = sampling.seed if seed is None else seed
    client = _client(config, kg)
    gateway = _gateway(config)
    describer = _describer(config, kg, client, gateway)
    out_dir = Path(out) if out else config.data_dir / "datasets" / kg
    specs = sample_classes(
        client,
        n=n,
        seed=seed,
        definition_for=describer,
        min_instances=k,
        max_depth=sampling.max_depth,
    )
    click.echo(f"sampled {len(specs)} classes from {kg} (seed {seed}, k {k})")
    for spec in specs:
        dataset = build_dataset(
            client,
            spec,
            k=k,
            seed=seed,
            describer=describer,
            kg_name=kg,
            max_depth=sampling.max_depth,
            positives_from=sampling.positives_from,
        )
        path = out_dir / f"{class_slug(spec.class_iri)}.json"
        save_dataset(dataset, path)
        shortfall = f" (negatives short by {dataset.negative_shortfall})" if dataset.negative_shortfall else ""
        click.echo(
            f"  {spec.class_iri}  {spec.label!r}: "
            f"{len(dataset.positives)}+/{len(dataset.negatives)}-{shortfall} -> {path}"
        )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_name", required=True, help="model name from the configuration")
@click.option(
    "--datasets",
    "dataset_paths",
    required=True,
    multiple=True,
    type=click.Path(exists=True),
    help="dataset file or directory (repeatable)",
)
@click.option("--max-workers", type=click.IntRange(min=1), default=4)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="text")
@_fail_cleanly
def classify(config_path, model_name, dataset_paths, max_workers, fmt):
    """Run the classifier over datasets and persist an evaluation run."""
    config = _config(config_path)
    if model_name not in config.models:
        raise click.UsageError(f"no model {model_name!r} in the configuration")
    model = config.models[model_name]
    datasets = _load_datasets(dataset_paths)
    kg_names = {d.kg_name for d in datasets}
    if len(kg_names) != 1:
        raise click.UsageError(f"datasets span multiple KGs: {sorted(kg_names)}")
    gateway = _gateway(config)
    # Fail before any writes when credentials are missing.
    gateway.check_credentials(model)
    store = RunStore(config.data_dir)
    run_id = compute_run_id(kg_names.pop(), model.model_id, config.templates.versions, datasets)
    classifier = CotClassifier(gateway, model, config.templates, run_id=run_id)
    summary = run_evaluation(
        datasets=datasets,
        classifier=classifier,
        store=store,
        kg_name=datasets[0].kg_name,
        model_id=model.model_id,
        template_versions=config.templates.versions,
        run_id=run_id,
        max_workers=max_workers,
    )
    click.echo(f"run {summary.run_id} -> {store.run_dir(summary.run_id)}")
    from .evaluator import summary_to_json

    click.echo(render_metrics_table(summary_to_json(summary), fmt))
    if summary.failed_classes:
        click.echo(f"failed classes: {summary.failed_classes}", err=True)


@main.command()
@click.argument("run_id")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="text")
@_fail_cleanly
def report(run_id, config_path, fmt):
    """Render the metrics table and, when annotations exist, the error table."""
    config = _config(config_path)
    store = RunStore(config.data_dir)
    try:
        summary = store.load_summary(run_id)
    except UnknownRunError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(render_metrics_table(summary, fmt))
    analysis = error_report(store, run_id)
    click.echo("")
    if analysis["annotated"] == 0:
        click.echo(
            f"no annotations yet for {analysis['n']} disagreements; "
            f"run: kgaudit annotate {run_id}"
        )
    else:
        click.echo(render_error_table(analysis, fmt))


_CAUSE_KEYS = {str(i + 1): cause for i, cause in enumerate(CAUSES)}


@main.command()
@click.argument("run_id")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--annotator", required=True, help="annotator id recorded with each judgment")
@_fail_cleanly
def annotate(run_id, config_path, annotator):
    """Step through unannotated disagreements in the terminal."""
    config = _config(config_path)
    store = RunStore(config.data_dir)
    store.require(run_id)
    records = extract_disagreements(store, run_id)
    annotation_store = AnnotationStore(store.run_dir(run_id))
    done = {rid for (rid, aid) in annotation_store.current() if aid == annotator}
    queue = [r for r in records if r.record_id not in done]
    click.echo(f"{len(queue)} of {len(records)} disagreements awaiting review by {annotator!r}")
    known = {r.record_id for r in records}
    for index, record in enumerate(queue, start=1):
        click.echo("")
        click.echo(f"[{index}/{len(queue)}] class: {record.class_label} <{record.class_iri}>")
        click.echo(f"definition: {record.class_definition}")
        click.echo(f"entity: {record.entity_label} <{record.entity_iri}>")
        click.echo(f"description: {record.entity_description}")
        click.echo(f"KG says: {record.gold}   classifier says: {record.predicted}")
        click.echo(f"rationale: {record.rationale}")
        verdict = None
        while verdict is None:
            key = click.prompt("your verdict ([p]ositive / [n]egative / [s]kip / [q]uit)").strip().lower()
            if key == "q":
                click.echo("stopped; annotations so far are saved")
                return
            if key == "s":
                break
            if key in ("p", "positive"):
                verdict = "positive"
            elif key in ("n", "negative"):
                verdict = "negative"
            else:
                click.echo("unrecognized key, nothing written")
        if verdict is None:
            continue
        cause = None
        while cause is None:
            menu = " / ".join(f"{k} {v}" for k, v in _CAUSE_KEYS.items())
            key = click.prompt(f"cause ({menu})").strip().lower()
            if key in _CAUSE_KEYS:
                cause = _CAUSE_KEYS[key]
            elif key in CAUSES:
                cause = key
            else:
                click.echo("unrecognized cause, nothing written")
        note = click.prompt("note (optional)", default="", show_default=False).strip() or None
        annotation_store.record(
            record_id=record.record_id,
            annotator_id=annotator,
            human_verdict=verdict,
            cause=cause,
            note=note,
            known_record_ids=known,
        )
        click.echo(f"recorded {verdict} / {cause}")
    click.echo("")
    click.echo("queue complete" if queue else "nothing to review")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--bind", default="127.0.0.1:8080", help="host:port to listen on")
@_fail_cleanly
def serve(config_path, bind):
    """Serve the review API and UI over the data directory."""
    import uvicorn

    from .service import create_app

    config = _config(config_path)
    host, _, port_text = bind.partition(":")
    try:
        port = int(port_text or "8080")
    except ValueError:
        raise click.UsageError(f"invalid bind address {bind!r}")
    static_dir = config.static_dir
    if static_dir is None:
        candidate = Path.cwd() / "frontend" / "dist"
        static_dir = candidate if candidate.is_dir() else None
    app = create_app(config.data_dir, static_dir=static_dir)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="info")
    except SystemExit:
        raise
    except OSError as exc:
        click.echo(f"error: cannot bind {bind}: {exc}", err=True)
        sys.exit(1)


@main.command()
@click.argument("run_id")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="text")
@_fail_cleanly
def usage(run_id, config_path, fmt):
    """Token and estimated-cost totals for one run."""
    config = _config(config_path)
    gateway = _gateway(config)
    try:
        usage_summary = gateway.usage_report(run_id, price_table=config.price_table)
    except UnknownRun as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(render_usage(usage_summary, fmt))


if __name__ == "__main__":
    main()
