"""Run configuration: one commented YAML file driving every subcommand.

``${VAR}`` references in string values are interpolated from the environment
at load time. Referenced template files are loaded and validated eagerly, so
a bad template fails the load, not the run. Provider credentials are *not*
stored here; model entries only name the environment variable that holds
them.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .classifier import TemplatePair, builtin_template, load_template
from .gateway import ModelConfig
from .kg_access import KgEndpoint

CONFIG_SCHEMA_VERSION = 1

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(Exception):
    pass


def _interpolate(value, source: str):
    if isinstance(value, str):
        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"{source}: environment variable {name} is unset")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, source) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, source) for v in value]
    return value


@dataclass(frozen=True)
class SamplingConfig:
    n_classes: int = 20
    k_examples: int = 20
    seed: int = 0
    max_depth: int = 10
    describe_limit: int = 20
    positives_from: str = "full"

    @property
    def min_instances(self) -> int:
        return self.k_examples


@dataclass(frozen=True)
class EndpointOptions:
    """Per-endpoint wiring that is not part of the SPARQL connection itself."""

    verbalization: str = "wikipedia"  # or "llm_rdf"
    sitelinks: str = "local_name"  # "local_name", "static:<path>", or "sparql"
    verbalizer_model: str | None = None
    wikipedia_lang: str = "en"


@dataclass
class RunConfig:
    endpoints: dict[str, KgEndpoint]
    endpoint_options: dict[str, EndpointOptions]
    models: dict[str, ModelConfig]
    templates: TemplatePair
    sampling: SamplingConfig
    data_dir: Path
    cache_dir: Path
    price_table: dict[str, dict[str, float]] = field(default_factory=dict)
    requests_per_minute: float = 600.0
    gateway_max_retries: int = 3
    static_dir: Path | None = None


def _template_ref(ref: str, config_dir: Path):
    if ref.startswith("builtin:"):
        return builtin_template(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.is_absolute():
        path = config_dir / path
    if not path.exists():
        raise ConfigError(f"template file does not exist: {path}")
    return load_template(path)


def _resolve_path(raw: str, config_dir: Path) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else config_dir / path


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = _interpolate(raw, str(path))
    version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version {version!r} unsupported")
    config_dir = path.parent

    endpoints: dict[str, KgEndpoint] = {}
    endpoint_options: dict[str, EndpointOptions] = {}
    for name, entry in (raw.get("endpoints") or {}).items():
        entry = dict(entry)
        options = EndpointOptions(
            verbalization=entry.pop("verbalization", "wikipedia"),
            sitelinks=entry.pop("sitelinks", "local_name"),
            verbalizer_model=entry.pop("verbalizer_model", None),
            wikipedia_lang=entry.pop("wikipedia_lang", "en"),
        )
        try:
            endpoints[name] = KgEndpoint(name=name, **entry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: endpoint {name!r}: {exc}") from exc
        endpoint_options[name] = options

    models: dict[str, ModelConfig] = {}
    for name, entry in (raw.get("models") or {}).items():
        entry = dict(entry)
        script_file = entry.pop("script_file", None)
        if script_file:
            script_path = _resolve_path(script_file, config_dir)
            try:
                entry["script"] = json.loads(script_path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"{path}: model {name!r} script file: {exc}") from exc
        entry.setdefault("model_id", name)
        try:
            models[name] = ModelConfig(**entry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: model {name!r}: {exc}") from exc

    template_section = raw.get("templates") or {}
    try:
        templates = TemplatePair(
            rationale=_template_ref(template_section.get("rationale", "builtin:rationale_v1"), config_dir),
            answer=_template_ref(template_section.get("answer", "builtin:answer_v1"), config_dir),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: template validation failed: {exc}") from exc

    sampling = SamplingConfig(**(raw.get("sampling") or {}))
    paths = raw.get("paths") or {}
    data_dir = _resolve_path(paths.get("data_dir", "data"), config_dir)
    cache_dir = _resolve_path(paths.get("cache_dir", "cache"), config_dir)
    static_raw = paths.get("static_dir")
    gateway_section = raw.get("gateway") or {}

    return RunConfig(
        endpoints=endpoints,
        endpoint_options=endpoint_options,
        models=models,
        templates=templates,
        sampling=sampling,
        data_dir=data_dir,
        cache_dir=cache_dir,
        price_table=raw.get("price_table") or {},
        requests_per_minute=float(gateway_section.get("requests_per_minute", 600)),
        gateway_max_retries=int(gateway_section.get("max_retries", 3)),
        static_dir=_resolve_path(static_raw, config_dir) if static_raw else None,
    )
