"""The two-step zero-shot chain-of-thought entity classifier.

Step one instantiates a rationale-generation template with the class label,
class definition, entity label, and entity description, and asks the model to
reason. Step two re-presents the same context plus the generated rationale and
asks for a one-word verdict, which is parsed into positive/negative. The
rationale is always generated before the answer.

Templates are data, not code: plain text files with a small header naming the
template, its version, and its free tokens. Versions travel with every result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .dataset import ClassSpec, LabeledExample
from .gateway import LlmGateway, ModelConfig

PARSE_OK = "ok"
PARSE_REPAIRED = "repaired"
PARSE_INVALID = "invalid"

STRICT_RETRY_INSTRUCTION = "Answer with exactly one word: positive or negative."

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_VERDICT_WORD_RE = re.compile(r"\b(positive|negative)\b", re.IGNORECASE)


class TemplateError(ValueError):
    """A template violates placeholder/free-token consistency."""


class UnknownToken(ValueError):
    """A substitution binds a token the template does not declare."""


class MissingDescription(ValueError):
    """The example carries no usable description."""


class Verdict(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with named ``{token}`` placeholders.

    Every declared free token must appear in the body, and every placeholder
    in the body must be declared.
    """

    name: str
    version: str
    body: str
    free_tokens: frozenset[str]

    def __post_init__(self) -> None:
        found = set(_PLACEHOLDER_RE.findall(self.body))
        undeclared = found - self.free_tokens
        if undeclared:
            raise TemplateError(f"{self.name}: undeclared placeholders {sorted(undeclared)}")
        unused = self.free_tokens - found
        if unused:
            raise TemplateError(f"{self.name}: free tokens never used {sorted(unused)}")


@dataclass(frozen=True)
class Substitution:
    """Bindings from token names to replacement text."""

    bindings: dict[str, str]

    def merged(self, extra: dict[str, str]) -> "Substitution":
        combined = dict(self.bindings)
        combined.update(extra)
        return Substitution(combined)

    def __contains__(self, token: str) -> bool:
        return token in self.bindings


def instantiate(template: PromptTemplate, theta: Substitution) -> str:
    """Replace every bound ``{token}`` simultaneously.

    Binding values are inserted verbatim and never re-scanned for
    placeholders; unbound free tokens stay as-is.
    """
    unknown = set(theta.bindings) - template.free_tokens
    if unknown:
        raise UnknownToken(f"{template.name}: bindings for unknown tokens {sorted(unknown)}")

    def replace(match: re.Match) -> str:
        token = match.group(1)
        if token in theta.bindings:
            return theta.bindings[token]
        return match.group(0)

    return _PLACEHOLDER_RE.sub(replace, template.body)


def parse_template(text: str, source: str = "<string>") -> PromptTemplate:
    """Parse the template file format: ``key: value`` header lines, a ``---``
    separator, then the body."""
    header: dict[str, str] = {}
    lines = text.splitlines()
    body_start = None
    for i, line in enumerate(lines):
        if line.strip() == "---":
            body_start = i + 1
            break
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise TemplateError(f"{source}: malformed header line {line!r}")
        header[key.strip().lower()] = value.strip()
    if body_start is None:
        raise TemplateError(f"{source}: missing '---' separator")
    missing = {"name", "version", "free_tokens"} - set(header)
    if missing:
        raise TemplateError(f"{source}: header missing {sorted(missing)}")
    tokens = frozenset(t.strip() for t in header["free_tokens"].split(",") if t.strip())
    body = "\n".join(lines[body_start:]).strip("\n")
    return PromptTemplate(
        name=header["name"], version=header["version"], body=body, free_tokens=tokens
    )


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), source=str(path))


def builtin_template(name: str) -> PromptTemplate:
    """Load one of the templates shipped with the package."""
    text = resources.files("kgaudit.templates").joinpath(f"{name}.txt").read_text("utf-8")
    return parse_template(text, source=f"builtin:{name}")


@dataclass(frozen=True)
class TemplatePair:
    rationale: PromptTemplate
    answer: PromptTemplate

    @property
    def versions(self) -> tuple[str, str]:
        return (self.rationale.version, self.answer.version)


def default_templates() -> TemplatePair:
    return TemplatePair(
        rationale=builtin_template("rationale_v1"),
        answer=builtin_template("answer_v1"),
    )


def build_theta0(spec: ClassSpec, example: LabeledExample) -> Substitution:
    """The four context bindings: class label, class definition, entity label,
    entity description."""
    if example.description_missing or not example.description:
        raise MissingDescription(f"{example.entity_iri} has no description")
    if not spec.definition:
        raise MissingDescription(f"{spec.class_iri} has no definition")
    return Substitution(
        {
            "label": spec.label,
            "definition": spec.definition,
            "entity": example.label,
            "description": example.description,
        }
    )


def parse_verdict(raw: str) -> tuple[Verdict | None, str]:
    """Parse a completion into a verdict.

    The exact word alone (after trimming) parses as ``ok``. Otherwise the
    final non-empty line is scanned for the two words, falling back to the
    whole text when the final line has neither; finding exactly one of the
    two words parses as ``repaired``. Both words in scope, or neither
    anywhere, is ``invalid``.
    """
    stripped = raw.strip().lower()
    if stripped in (Verdict.POSITIVE.value, Verdict.NEGATIVE.value):
        return Verdict(stripped), PARSE_OK

    def scan(text: str) -> set[str]:
        return {m.lower() for m in _VERDICT_WORD_RE.findall(text)}

    lines = [line for line in raw.splitlines() if line.strip()]
    final_line = lines[-1] if lines else ""
    found = scan(final_line)
    if not found:
        found = scan(raw)
    if len(found) == 1:
        return Verdict(found.pop()), PARSE_REPAIRED
    return None, PARSE_INVALID


@dataclass(frozen=True)
class ClassificationResult:
    """Rationale plus verdict for one (class, entity) pair, with provenance.

    ``verdict`` is None exactly when ``parse_status`` is invalid; such results
    are excluded from confusion matrices and counted separately.
    """

    class_iri: str
    entity_iri: str
    rationale: str
    verdict: Verdict | None
    raw_rationale_completion: str
    raw_answer_completion: str
    model_id: str
    template_versions: tuple[str, str]
    parse_status: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.parse_status == PARSE_INVALID) != (self.verdict is None):
            raise ValueError("verdict must be absent exactly when parse_status is invalid")


def generate_rationale(
    gateway: LlmGateway,
    config: ModelConfig,
    templates: TemplatePair,
    theta0: Substitution,
    run_id: str | None = None,
) -> tuple[str, tuple[str, ...]]:
    """Step one: complete the instantiated rationale template."""
    prompt = instantiate(templates.rationale, theta0)
    completion = gateway.complete(config, prompt, run_id=run_id)
    flags = () if completion.text.strip() else ("empty_rationale",)
    return completion.text, flags


def generate_answer(
    gateway: LlmGateway,
    config: ModelConfig,
    templates: TemplatePair,
    theta1: Substitution,
    run_id: str | None = None,
) -> tuple[Verdict | None, str, str]:
    """Step two: complete the answer template and parse the verdict.

    On a parse failure the question is re-asked once with a stricter
    instruction appended; a second failure yields an invalid result.
    Returns (verdict, parse_status, raw_completion_text).
    """
    if "rationale" not in theta1:
        raise ValueError("theta1 must bind the rationale")
    prompt = instantiate(templates.answer, theta1)
    completion = gateway.complete(config, prompt, run_id=run_id)
    verdict, status = parse_verdict(completion.text)
    if verdict is not None:
        return verdict, status, completion.text
    retry_prompt = f"{prompt}\n\n{STRICT_RETRY_INSTRUCTION}"
    retry = gateway.complete(config, retry_prompt, run_id=run_id)
    verdict, status = parse_verdict(retry.text)
    if verdict is not None:
        return verdict, PARSE_REPAIRED, retry.text
    return None, PARSE_INVALID, retry.text


class CotClassifier:
    """Bundles a gateway, model, and template pair into a classify() call."""

    def __init__(
        self,
        gateway: LlmGateway,
        config: ModelConfig,
        templates: TemplatePair | None = None,
        run_id: str | None = None,
    ):
        self.gateway = gateway
        self.config = config
        self.templates = templates or default_templates()
        self.run_id = run_id

    def classify(self, spec: ClassSpec, example: LabeledExample) -> ClassificationResult:
        theta0 = build_theta0(spec, example)
        rationale, flags = generate_rationale(
            self.gateway, self.config, self.templates, theta0, run_id=self.run_id
        )
        theta1 = theta0.merged({"rationale": rationale})
        verdict, status, raw_answer = generate_answer(
            self.gateway, self.config, self.templates, theta1, run_id=self.run_id
        )
        return ClassificationResult(
            class_iri=spec.class_iri,
            entity_iri=example.entity_iri,
            rationale=rationale,
            verdict=verdict,
            raw_rationale_completion=rationale,
            raw_answer_completion=raw_answer,
            model_id=self.config.model_id,
            template_versions=self.templates.versions,
            parse_status=status,
            flags=flags,
        )
