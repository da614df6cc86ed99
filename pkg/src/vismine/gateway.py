"""Backend-agnostic LLM access.

One Gateway fronts any number of named backends (HTTP chat-completion
endpoints or deterministic stubs), adds bounded-retry and a content-hash
response cache, and turns raw responses into verdicts with safe defaults:
anything malformed becomes a negative at confidence zero.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .errors import (
    AuthenticationError,
    BackendUnavailable,
    GatewayError,
    TransientBackendError,
)

logger = logging.getLogger(__name__)

MALFORMED_EVIDENCE = "(malformed)"


@dataclass(frozen=True)
class PromptRequest:
    """Everything needed to render one deterministic prompt."""

    system: str
    exemplars: tuple[tuple[str, str], ...]
    target: str
    schema_id: str

    def render(self) -> str:
        parts = [self.system, "", f"Schema: {self.schema_id}"]
        for i, (evidence, payload) in enumerate(self.exemplars, 1):
            parts += ["", f"### Example {i}", evidence, f"Labels: {payload}"]
        parts += ["", "### Target", self.target]
        return "\n".join(parts)


@dataclass(frozen=True)
class ModelVerdict:
    backend_id: str
    decision: bool
    confidence: float
    evidence: str

    def to_dict(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "decision": self.decision,
            "confidence": self.confidence,
            "evidence": self.evidence,
        }


class Backend(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


class StubBackend:
    """Deterministic offline backend driven by a response function."""

    def __init__(self, name: str, respond: Callable[[str], str]):
        self.name = name
        self._respond = respond
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        return self._respond(prompt)


class HttpBackend:
    """Chat-completion-style HTTP endpoint. The API key lives in an env var."""

    def __init__(
        self,
        name: str,
        endpoint: str,
        model: str,
        api_key_env: str,
        temperature: float = 0.0,
        timeout: float = 60.0,
        max_tokens: int = 1024,
    ):
        self.name = name
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.timeout = timeout
        self.max_tokens = max_tokens
        self.calls = 0

    def complete(self, prompt: str) -> str:
        import requests

        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise AuthenticationError(
                f"backend {self.name!r}: env var {self.api_key_env!r} is not set"
            )
        self.calls += 1
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        try:
            response = requests.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"backend {self.name!r}: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthenticationError(
                f"backend {self.name!r}: auth failed ({response.status_code})"
            )
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(
                f"backend {self.name!r}: HTTP {response.status_code}"
            )
        if response.status_code != 200:
            raise GatewayError(f"backend {self.name!r}: HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"backend {self.name!r}: unexpected response shape") from exc


def prompt_hash(backend_id: str, prompt: str) -> str:
    digest = hashlib.sha256()
    digest.update(backend_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt.encode("utf-8"))
    return digest.hexdigest()


class PromptCache:
    """Request-hash -> response files; layout is stable for auditing."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        with self._lock:
            if not path.exists():
                return None
            return path.read_text(encoding="utf-8")

    def put(self, key: str, text: str) -> None:
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + f".tmp{os.getpid()}")
            tmp.write_text(text, encoding="utf-8")
            tmp.replace(path)


@dataclass
class GatewayStats:
    requests: int = 0
    cache_hits: int = 0
    network_calls: int = 0
    retries: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "requests": self.requests,
            "cache_hits": self.cache_hits,
            "network_calls": self.network_calls,
            "retries": self.retries,
            "failures": self.failures,
        }


class Gateway:
    """Routes prompt requests to named backends with retry and caching."""

    def __init__(
        self,
        backends: Mapping[str, Backend],
        cache_dir: str | Path | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        concurrency: int = 8,
        min_interval: float = 0.0,
    ):
        if max_attempts < 1:
            raise GatewayError("max_attempts must be >= 1")
        self.backends = dict(backends)
        self.cache = PromptCache(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.min_interval = min_interval
        self.stats = GatewayStats()
        self._stats_lock = threading.Lock()
        self._limits = {name: threading.Semaphore(concurrency) for name in self.backends}
        self._pace_locks = {name: threading.Lock() for name in self.backends}
        self._last_call = {name: 0.0 for name in self.backends}

    def backend(self, backend_id: str) -> Backend:
        if backend_id not in self.backends:
            raise GatewayError(f"unknown backend {backend_id!r}")
        return self.backends[backend_id]

    def complete(self, backend_id: str, request: PromptRequest) -> str:
        """Raw response text; cached by content hash of the prompt."""
        backend = self.backend(backend_id)
        prompt = request.render()
        key = prompt_hash(backend_id, prompt)
        with self._stats_lock:
            self.stats.requests += 1
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._stats_lock:
                    self.stats.cache_hits += 1
                return cached
        text = self._complete_with_retry(backend, backend_id, prompt, key)
        if self.cache is not None:
            self.cache.put(key, text)
        return text

    def _complete_with_retry(
        self, backend: Backend, backend_id: str, prompt: str, key: str
    ) -> str:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                with self._limits[backend_id]:
                    self._pace(backend_id)
                    with self._stats_lock:
                        self.stats.network_calls += 1
                    return backend.complete(prompt)
            except TransientBackendError as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    with self._stats_lock:
                        self.stats.retries += 1
                    delay = self.backoff_base * (2**attempt)
                    logger.warning(
                        "backend %s transient failure (attempt %d/%d), retrying in %.1fs: %s",
                        backend_id, attempt + 1, self.max_attempts, delay, exc,
                    )
                    if delay > 0:
                        time.sleep(delay)
        with self._stats_lock:
            self.stats.failures += 1
        raise BackendUnavailable(
            f"backend {backend_id!r} unavailable after {self.max_attempts} attempts: "
            f"{last_error}",
            request_id=key,
        )

    def _pace(self, backend_id: str) -> None:
        """Per-backend rate limiting: at most one call per min_interval."""
        if self.min_interval <= 0:
            return
        with self._pace_locks[backend_id]:
            wait = self._last_call[backend_id] + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_call[backend_id] = time.monotonic()


def parse_json_payload(raw: str) -> dict | None:
    """First balanced JSON object embedded in a response, or None."""
    start = raw.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(raw)):
            c = raw[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        payload = json.loads(raw[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(payload, dict):
                        return payload
                    break
        start = raw.find("{", start + 1)
    return None


def clip_confidence(value) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return 0.0
    if number != number:  # NaN
        return 0.0
    return min(1.0, max(0.0, number))


def _as_decision(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        folded = value.strip().lower()
        if folded in ("true", "yes", "positive", "relevant", "1"):
            return True
        if folded in ("false", "no", "negative", "irrelevant", "0"):
            return False
    return None


def parse_verdict(raw: str, backend_id: str = "") -> ModelVerdict:
    """Structured verdict with safe defaults; never raises.

    A response that does not contain a JSON object with a usable
    "relevant" value becomes (negative, 0.0, "(malformed)").
    """
    payload = parse_json_payload(raw)
    if payload is None:
        return ModelVerdict(backend_id, False, 0.0, MALFORMED_EVIDENCE)
    decision = _as_decision(payload.get("relevant", payload.get("decision")))
    if decision is None:
        return ModelVerdict(backend_id, False, 0.0, MALFORMED_EVIDENCE)
    confidence = clip_confidence(payload.get("confidence"))
    evidence = payload.get("evidence")
    evidence = str(evidence) if evidence is not None else ""
    return ModelVerdict(backend_id, decision, confidence, evidence)


def consensus(verdicts: Sequence[ModelVerdict]) -> bool:
    """Strict all-positive rule, generalized to any number of backends."""
    if not verdicts:
        raise GatewayError("consensus requires at least one verdict")
    return all(v.decision for v in verdicts)


# -- deterministic keyword stub ------------------------------------------

def _target_section(prompt: str) -> str:
    marker = "### Target"
    pos = prompt.rfind(marker)
    return prompt[pos + len(marker):] if pos != -1 else prompt


@dataclass(frozen=True)
class StubRules:
    """Keyword rules powering a fully deterministic offline backend.

    Decisions look only at the prompt's target section, so expectations
    can be traced by hand from the input text.
    """

    screen_keywords: tuple[str, ...] = ()
    figure_keywords: tuple[str, ...] = ()
    role_rules: tuple[tuple[str, str], ...] = ()
    listener_rules: tuple[tuple[str, str], ...] = ()
    data_type_rules: tuple[tuple[str, str], ...] = ()
    vis_type_rules: tuple[tuple[str, str], ...] = ()
    purpose_rules: tuple[tuple[str, str], ...] = ()
    data_type_default: str = "nominal"
    vis_type_default: str = "other"
    purpose_default: str = "other"
    positive_confidence: float = 0.9
    negative_confidence: float = 0.1

    @classmethod
    def from_config(cls, raw: Mapping) -> "StubRules":
        def pairs(key):
            return tuple((str(k), str(v)) for k, v in raw.get(key, ()))

        return cls(
            screen_keywords=tuple(raw.get("screen_keywords", ())),
            figure_keywords=tuple(raw.get("figure_keywords", ())),
            role_rules=pairs("role_rules"),
            listener_rules=pairs("listener_rules"),
            data_type_rules=pairs("data_type_rules"),
            vis_type_rules=pairs("vis_type_rules"),
            purpose_rules=pairs("purpose_rules"),
            data_type_default=str(raw.get("data_type_default", "nominal")),
            vis_type_default=str(raw.get("vis_type_default", "other")),
            purpose_default=str(raw.get("purpose_default", "other")),
            positive_confidence=float(raw.get("positive_confidence", 0.9)),
            negative_confidence=float(raw.get("negative_confidence", 0.1)),
        )


class KeywordStubBackend:
    """Stub backend answering each schema from keyword rules on the target."""

    def __init__(self, name: str, rules: StubRules):
        self.name = name
        self.rules = rules
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        target = _target_section(prompt).lower()
        if "Schema: labels/" in prompt:
            return json.dumps(self._labels_payload(target), sort_keys=True)
        if "Schema: figure/" in prompt:
            return json.dumps(self._binary_payload(target, self.rules.figure_keywords, with_role=True), sort_keys=True)
        return json.dumps(self._binary_payload(target, self.rules.screen_keywords, with_role=False), sort_keys=True)

    def _binary_payload(self, target: str, keywords, with_role: bool) -> dict:
        matched = [kw for kw in keywords if kw.lower() in target]
        relevant = bool(matched)
        payload = {
            "relevant": relevant,
            "confidence": self.rules.positive_confidence if relevant else self.rules.negative_confidence,
            "evidence": matched[0] if matched else "no keyword",
        }
        if with_role:
            role = None
            for keyword, value in self.rules.role_rules:
                if keyword.lower() in target:
                    role = value
                    break
            payload["role"] = role
        return payload

    def _labels_payload(self, target: str) -> dict:
        def multi(rule_pairs, default):
            values = []
            for keyword, value in rule_pairs:
                if keyword.lower() in target and value not in values:
                    values.append(value)
            return values or list(default)

        def single(rule_pairs, default):
            for keyword, value in rule_pairs:
                if keyword.lower() in target:
                    return value
            return default

        listeners = multi(self.rules.listener_rules, ())
        data_types = multi(self.rules.data_type_rules, (self.rules.data_type_default,))
        vis_type = single(self.rules.vis_type_rules, self.rules.vis_type_default)
        purpose = single(self.rules.purpose_rules, self.rules.purpose_default)
        confidence = self.rules.positive_confidence
        return {
            "model_listener": listeners,
            "data_type": data_types,
            "visualization_type": vis_type,
            "visualization_purpose": purpose,
            "confidences": {
                "model_listener": confidence,
                "data_type": confidence,
                "visualization_type": confidence,
                "visualization_purpose": confidence,
            },
            "evidence": {
                "model_listener": "keyword rule",
                "data_type": "keyword rule",
                "visualization_type": "keyword rule",
                "visualization_purpose": "keyword rule",
            },
        }
