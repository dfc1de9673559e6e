"""Uniform completion interface over LLM services.

One ``complete`` call covers hosted OpenAI-compatible APIs, local servers
speaking the same wire format, and a scripted offline mock. Every response is
cached on disk keyed by (model, temperature, prompt); the cache, not the
temperature, is the reproducibility mechanism. Token usage is appended to a
log so runs can be costed afterwards.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import requests

logger = logging.getLogger(__name__)

PROVIDERS = ("openai_compatible", "local", "scripted_mock")

CACHE_SCHEMA_VERSION = 1


class GatewayError(Exception):
    """Base class for completion-service failures."""


class AuthMissing(GatewayError):
    """A hosted provider is configured but its credential env var is unset."""


class RateLimited(GatewayError):
    """The provider kept answering 429 through all retries."""


class ProviderError(GatewayError):
    """The provider failed in a non-rate-limit way."""


class UnknownRun(GatewayError):
    """No usage was ever logged for the requested run id."""


@dataclass(frozen=True)
class ModelConfig:
    """How to reach one model. ``script`` maps prompt substrings to canned
    outputs for the scripted mock ("*" matches everything)."""

    model_id: str
    provider: str = "openai_compatible"
    temperature: float = 0.1
    max_output_tokens: int = 1024
    base_url: str | None = None
    api_key_env: str | None = None
    script: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown provider {self.provider!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.provider == "scripted_mock" and self.script is None:
            raise ValueError("scripted_mock requires a script")


@dataclass(frozen=True)
class Completion:
    """One completion with its provenance. Cached replays carry zero latency."""

    text: str
    input_tokens: int
    output_tokens: int
    cached: bool
    latency: float
    request_hash: str


class TokenBucket:
    """Blocking token-bucket limiter (requests per minute)."""

    def __init__(self, requests_per_minute: float):
        self._capacity = max(1.0, requests_per_minute)
        self._tokens = self._capacity
        self._refill_per_second = requests_per_minute / 60.0
        self._updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(
                    self._capacity, self._tokens + (now - self._updated) * self._refill_per_second
                )
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                needed = (1.0 - self._tokens) / self._refill_per_second
            time.sleep(needed)


def request_payload(config: ModelConfig, prompt_text: str) -> dict:
    """The exact chat-completion body sent on the wire (also hashed for the
    mock, which sends nothing)."""
    return {
        "model": config.model_id,
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
        "messages": [{"role": "user", "content": prompt_text}],
    }


def payload_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _cache_key(config: ModelConfig, prompt_text: str) -> str:
    material = f"{config.model_id}\x1f{config.temperature!r}\x1f{prompt_text}"
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


def _approx_tokens(text: str) -> int:
    return len(text.split())


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}-{uuid.uuid4().hex[:8]}")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class ModelUsage:
    calls: int = 0
    cached_calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    billed_input_tokens: int = 0
    billed_output_tokens: int = 0
    cost: float | None = None


@dataclass
class UsageReport:
    run_id: str
    per_model: dict[str, ModelUsage] = field(default_factory=dict)

    @property
    def input_tokens(self) -> int:
        return sum(u.input_tokens for u in self.per_model.values())

    @property
    def output_tokens(self) -> int:
        return sum(u.output_tokens for u in self.per_model.values())

    @property
    def cost(self) -> float | None:
        costs = [u.cost for u in self.per_model.values()]
        if any(c is None for c in costs):
            return None
        return sum(costs)  # type: ignore[arg-type]


class LlmGateway:
    """Completion calls with disk caching, retries, rate limiting, and usage
    accounting. Safe for concurrent use."""

    def __init__(
        self,
        cache_dir: str | Path,
        usage_log_path: str | Path | None = None,
        requests_per_minute: float = 600.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        request_timeout: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.usage_log_path = Path(usage_log_path) if usage_log_path else self.cache_dir / "usage.jsonl"
        self.max_retries = max_retries
        self._backoff_base = backoff_base
        self._request_timeout = request_timeout
        self._session = session or requests.Session()
        self._requests_per_minute = requests_per_minute
        self._buckets: dict[str, TokenBucket] = {}
        self._bucket_lock = threading.Lock()
        self._usage_lock = threading.Lock()

    # --------------------------------------------------------------- helpers

    def check_credentials(self, config: ModelConfig) -> None:
        """Raise AuthMissing when a hosted provider has no usable credential.

        Local servers and the scripted mock require none.
        """
        if config.provider != "openai_compatible":
            return
        if not config.api_key_env:
            raise AuthMissing(f"model {config.model_id}: no credential env var configured")
        if not os.environ.get(config.api_key_env):
            raise AuthMissing(
                f"model {config.model_id}: environment variable {config.api_key_env} is unset"
            )

    def _bucket_for(self, config: ModelConfig) -> TokenBucket:
        key = f"{config.provider}|{config.base_url or ''}"
        with self._bucket_lock:
            if key not in self._buckets:
                self._buckets[key] = TokenBucket(self._requests_per_minute)
            return self._buckets[key]

    def _cache_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _log_usage(self, run_id: str | None, config: ModelConfig, completion: Completion) -> None:
        record = {
            "run_id": run_id,
            "model_id": config.model_id,
            "input_tokens": completion.input_tokens,
            "output_tokens": completion.output_tokens,
            "cached": completion.cached,
            "logged_at": time.time(),
        }
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._usage_lock:
            with open(self.usage_log_path, "a", encoding="utf-8") as fh:
                fh.write(line)

    # ------------------------------------------------------------- providers

    def _complete_scripted(self, config: ModelConfig, prompt_text: str) -> tuple[str, dict]:
        assert config.script is not None
        fallback: str | None = None
        for pattern, output in config.script.items():
            if pattern == "*":
                fallback = output
                continue
            if pattern in prompt_text:
                return output, {"provider": "scripted_mock", "pattern": pattern}
        if fallback is not None:
            return fallback, {"provider": "scripted_mock", "pattern": "*"}
        raise ProviderError(
            f"scripted mock for {config.model_id} has no pattern matching the prompt"
        )

    def _complete_http(self, config: ModelConfig, payload: dict) -> tuple[str, int, int, dict]:
        if not config.base_url:
            raise ProviderError(f"model {config.model_id}: base_url is not configured")
        url = config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if config.provider == "openai_compatible":
            self.check_credentials(config)
            headers["Authorization"] = f"Bearer {os.environ[config.api_key_env]}"  # type: ignore[index]
        elif config.api_key_env and os.environ.get(config.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[config.api_key_env]}"

        last_status: int | None = None
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=self._request_timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("completion request failed (attempt %d): %s", attempt + 1, exc)
                continue
            last_status = response.status_code
            if response.status_code == 200:
                try:
                    body = response.json()
                    text = body["choices"][0]["message"]["content"]
                    usage = body.get("usage", {})
                    return (
                        text,
                        int(usage.get("prompt_tokens", _approx_tokens(str(payload)))),
                        int(usage.get("completion_tokens", _approx_tokens(text))),
                        body,
                    )
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ProviderError(f"malformed completion response: {exc}") from exc
            if response.status_code == 429 or response.status_code >= 500:
                logger.warning(
                    "provider returned HTTP %d (attempt %d)", response.status_code, attempt + 1
                )
                continue
            raise ProviderError(f"provider returned HTTP {response.status_code}")
        if last_status == 429:
            raise RateLimited(f"rate limited after {self.max_retries + 1} attempts")
        raise ProviderError(
            f"provider unreachable after {self.max_retries + 1} attempts: "
            f"{last_error or f'HTTP {last_status}'}"
        )

    # ------------------------------------------------------------------- api

    def complete(self, config: ModelConfig, prompt_text: str, run_id: str | None = None) -> Completion:
        """Complete ``prompt_text``; identical (model, temperature, prompt)
        triples replay from the cache byte-identically."""
        if not prompt_text:
            raise ValueError("prompt_text must be non-empty")
        if config.provider == "openai_compatible":
            self.check_credentials(config)

        payload = request_payload(config, prompt_text)
        req_hash = payload_hash(payload)
        key = _cache_key(config, prompt_text)
        cache_path = self._cache_path(key)
        if cache_path.exists():
            entry = json.loads(cache_path.read_text(encoding="utf-8"))
            completion = Completion(
                text=entry["text"],
                input_tokens=entry["input_tokens"],
                output_tokens=entry["output_tokens"],
                cached=True,
                latency=0.0,
                request_hash=entry["request_hash"],
            )
            self._log_usage(run_id, config, completion)
            return completion

        self._bucket_for(config).acquire()
        started = time.monotonic()
        if config.provider == "scripted_mock":
            text, raw = self._complete_scripted(config, prompt_text)
            input_tokens = _approx_tokens(prompt_text)
            output_tokens = _approx_tokens(text)
        else:
            text, input_tokens, output_tokens, raw = self._complete_http(config, payload)
        latency = time.monotonic() - started

        entry = {
            "schema_version": CACHE_SCHEMA_VERSION,
            "model_id": config.model_id,
            "temperature": config.temperature,
            "prompt": prompt_text,
            "text": text,
            "input_tokens": input_tokens,
            "output_tokens": output_tokens,
            "request_hash": req_hash,
            "raw_response": raw,
            "created_at": time.time(),
        }
        _atomic_write(cache_path, json.dumps(entry, ensure_ascii=False, sort_keys=True))
        completion = Completion(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            cached=False,
            latency=latency,
            request_hash=req_hash,
        )
        self._log_usage(run_id, config, completion)
        return completion

    def usage_report(self, run_id: str, price_table: Mapping[str, Mapping[str, float]] | None = None) -> UsageReport:
        """Token and cost totals for one run, from the usage log.

        Cost is estimated from uncached calls via ``price_table`` entries of
        the form ``{input_per_1k, output_per_1k}``; models missing from the
        table report cost as unknown while their tokens are still totaled.
        """
        report = UsageReport(run_id=run_id)
        if not self.usage_log_path.exists():
            raise UnknownRun(f"no usage logged for run {run_id!r}")
        found = False
        with open(self.usage_log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record.get("run_id") != run_id:
                    continue
                found = True
                usage = report.per_model.setdefault(record["model_id"], ModelUsage())
                usage.calls += 1
                usage.input_tokens += record["input_tokens"]
                usage.output_tokens += record["output_tokens"]
                if record.get("cached"):
                    usage.cached_calls += 1
                else:
                    usage.billed_input_tokens += record["input_tokens"]
                    usage.billed_output_tokens += record["output_tokens"]
        if not found:
            raise UnknownRun(f"no usage logged for run {run_id!r}")
        price_table = price_table or {}
        for model_id, usage in report.per_model.items():
            prices = price_table.get(model_id)
            if prices and "input_per_1k" in prices and "output_per_1k" in prices:
                usage.cost = (
                    usage.billed_input_tokens / 1000.0 * float(prices["input_per_1k"])
                    + usage.billed_output_tokens / 1000.0 * float(prices["output_per_1k"])
                )
            else:
                usage.cost = None
        return report
