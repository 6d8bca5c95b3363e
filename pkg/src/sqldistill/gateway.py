"""Uniform client for generator and juror LLMs.

Real backends speak an OpenAI-compatible chat-completion protocol over
HTTP; the mock backend replays deterministic completions from a fixture
file so every pipeline stage runs offline. Rate limiting is enforced per
backend with a shared semaphore, retries are bounded by the backend's
retry policy, and every attempt lands in a shared call log.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import (
    AllBackendsFailed,
    BackendUnavailable,
    InvariantError,
    MalformedResponse,
    ParseError,
    PromptTooLong,
)

DEFAULT_CHAR_BUDGET = 24_000


class Role(str, enum.Enum):
    NL_GENERATOR = "nl_generator"
    SQL_GENERATOR = "sql_generator"
    JUROR = "juror"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.5
    top_k: int = 40
    top_p: float = 0.9
    max_tokens: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise InvariantError("temperature must be >= 0")
        if self.top_k < 1:
            raise InvariantError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise InvariantError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (0.1, 0.5, 2.0)

    def delay(self, attempt: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt - 1, len(self.backoff) - 1)]


@dataclass(frozen=True)
class BackendSpec:
    """One serving endpoint for a named model, with its role in the pipeline."""

    name: str
    endpoint: str  # full chat-completion URL, or "mock"
    role: Role
    concurrency_limit: int = 4
    retry_policy: RetryPolicy = RetryPolicy()
    char_budget: int = DEFAULT_CHAR_BUDGET
    fixture_path: str | None = None
    api_key_env: str = "LLM_API_KEY"
    proprietary: bool = False

    def __post_init__(self):
        if self.concurrency_limit < 1:
            raise InvariantError("concurrency_limit must be >= 1")
        if self.endpoint == "mock" and not self.fixture_path:
            raise InvariantError(f"mock backend {self.name!r} requires a fixture path")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"


@dataclass
class CallRecord:
    backend: str
    seed: int
    latency_s: float
    ok: bool
    attempt: int
    error: str = ""


class CallLog:
    """Thread-safe record of every backend attempt made through the gateway."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def count(self, backend: str | None = None, ok: bool | None = None) -> int:
        return len(
            [
                r
                for r in self.records()
                if (backend is None or r.backend == backend)
                and (ok is None or r.ok is ok)
            ]
        )

    def counts_by_backend(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for record in self.records():
            out[record.backend] = out.get(record.backend, 0) + 1
        return out


def prompt_fingerprint(prompt: str) -> str:
    """Stable identifier used to key mock fixture records."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class _TransientFailure(Exception):
    """Internal: a failure worth retrying."""


@dataclass
class _FixtureRule:
    completion: str = ""
    error: str | None = None
    fail_times: int = 0
    prompt_hash: str | None = None
    prompt_contains: tuple[str, ...] | None = None  # all substrings must match
    seed: int | str = "*"


class MockBackend:
    """Deterministic fixture-driven backend.

    Fixture files are line-delimited JSON. Each record matches either an
    exact prompt hash or any prompt containing the given substring (or
    every substring, when a list is given), optionally pinned to one
    seed::

        {"prompt_hash": "<sha256>", "seed": 1, "completion": "..."}
        {"prompt_contains": "## Generated Examples", "seed": "*",
         "completion": "- question {{seed}}"}
        {"prompt_contains": "", "error": "unavailable"}
        {"prompt_hash": "<sha256>", "seed": 2, "completion": "ok", "fail_times": 1}

    ``{{seed}}`` in a completion is replaced by the call's seed, so one
    rule can produce distinct variants per seed. Identical (prompt, seed)
    always yields the identical completion.
    """

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self._rules = self._load(Path(spec.fixture_path))
        self._lock = threading.Lock()
        self._attempts: dict[int, int] = {}
        self.in_flight = 0
        self.max_in_flight = 0

    @staticmethod
    def _load(path: Path) -> list[_FixtureRule]:
        rules = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"invalid mock fixture JSON: {exc.msg}", path=str(path), line=lineno
                    ) from exc
                contains = record.get("prompt_contains")
                if isinstance(contains, str):
                    contains = (contains,)
                elif contains is not None:
                    contains = tuple(contains)
                rules.append(
                    _FixtureRule(
                        completion=record.get("completion", ""),
                        error=record.get("error"),
                        fail_times=int(record.get("fail_times", 0)),
                        prompt_hash=record.get("prompt_hash"),
                        prompt_contains=contains,
                        seed=record.get("seed", "*"),
                    )
                )
        return rules

    def _match(self, prompt: str, seed: int) -> _FixtureRule:
        fingerprint = prompt_fingerprint(prompt)
        by_hash = [r for r in self._rules if r.prompt_hash == fingerprint]
        for rule in by_hash:
            if rule.seed == seed:
                return rule
        for rule in by_hash:
            if rule.seed == "*":
                return rule
        contains = [
            r
            for r in self._rules
            if r.prompt_contains is not None
            and all(needle in prompt for needle in r.prompt_contains)
        ]
        for rule in contains:
            if rule.seed == seed:
                return rule
        for rule in contains:
            if rule.seed == "*":
                return rule
        raise BackendUnavailable(
            f"mock backend {self.spec.name!r} has no fixture entry for prompt "
            f"{fingerprint[:12]}... seed={seed}"
        )

    def complete(self, prompt: str, params: SamplingParams, attempt: int) -> str:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            rule = self._match(prompt, params.seed)
            if rule.error is not None:
                raise _TransientFailure(f"mock error: {rule.error}")
            if rule.fail_times:
                key = id(rule)
                with self._lock:
                    used = self._attempts.get(key, 0)
                    if used < rule.fail_times:
                        self._attempts[key] = used + 1
                        raise _TransientFailure(
                            f"mock transient failure {used + 1}/{rule.fail_times}"
                        )
            return rule.completion.replace("{{seed}}", str(params.seed))
        finally:
            with self._lock:
                self.in_flight -= 1


class HttpBackend:
    """OpenAI-compatible chat-completion client over httpx."""

    def __init__(self, spec: BackendSpec, transport: httpx.BaseTransport | None = None,
                 timeout: float = 60.0):
        self.spec = spec
        headers = {}
        api_key = os.environ.get(spec.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def complete(self, prompt: str, params: SamplingParams, attempt: int) -> str:
        body = {
            "model": self.spec.name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "top_k": params.top_k,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        }
        try:
            response = self._client.post(self.spec.endpoint, json=body)
        except httpx.TransportError as exc:
            raise _TransientFailure(str(exc)) from exc
        if response.status_code in (408, 429) or response.status_code >= 500:
            raise _TransientFailure(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise BackendUnavailable(
                f"backend {self.spec.name!r}: HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(
                f"backend {self.spec.name!r} returned an unparsable completion body"
            ) from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"backend {self.spec.name!r}: completion is not text")
        return text


@dataclass(frozen=True)
class Completion:
    backend: str
    seed: int
    text: str


@dataclass(frozen=True)
class EnsembleError:
    backend: str
    seed: int
    message: str


@dataclass
class EnsembleResult:
    completions: list[Completion]
    errors: list[EnsembleError] = field(default_factory=list)


class LlmGateway:
    """Shared entry point for all backend calls.

    Safe for concurrent use from many pipeline workers; each backend's
    concurrency_limit is enforced with a semaphore shared across callers.
    Result ordering from ensembles is deterministic (backend name, then
    seed) regardless of completion timing.
    """

    def __init__(
        self,
        backends: list[BackendSpec],
        allow_proprietary: bool = False,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.allow_proprietary = allow_proprietary
        self.call_log = CallLog()
        self._sleep = sleep
        self._specs: dict[str, BackendSpec] = {}
        self._clients: dict[str, MockBackend | HttpBackend] = {}
        self._semaphores: dict[str, threading.BoundedSemaphore] = {}
        for spec in backends:
            self.register(spec, transport=transport)

    def register(self, spec: BackendSpec, transport: httpx.BaseTransport | None = None) -> None:
        if spec.name in self._specs:
            raise InvariantError(f"backend {spec.name!r} registered twice")
        self._specs[spec.name] = spec
        self._clients[spec.name] = (
            MockBackend(spec) if spec.is_mock else HttpBackend(spec, transport=transport)
        )
        self._semaphores[spec.name] = threading.BoundedSemaphore(spec.concurrency_limit)

    def spec(self, name: str) -> BackendSpec:
        return self._specs[name]

    def specs_for_role(self, role: Role) -> list[BackendSpec]:
        return sorted(
            (s for s in self._specs.values() if s.role is role), key=lambda s: s.name
        )

    def mock_client(self, name: str) -> MockBackend:
        client = self._clients[name]
        if not isinstance(client, MockBackend):
            raise InvariantError(f"backend {name!r} is not a mock")
        return client

    def _resolve(self, backend: BackendSpec | str) -> BackendSpec:
        if isinstance(backend, str):
            return self._specs[backend]
        if backend.name not in self._specs:
            self.register(backend)
        return self._specs[backend.name]

    def complete(
        self, backend: BackendSpec | str, prompt: str, params: SamplingParams
    ) -> str:
        """Run one completion, retrying transient failures per policy."""
        spec = self._resolve(backend)
        if spec.proprietary and not self.allow_proprietary:
            raise InvariantError(
                f"backend {spec.name!r} is marked proprietary and allow_proprietary is off"
            )
        if not prompt:
            raise InvariantError("prompt must be non-empty")
        if len(prompt) > spec.char_budget:
            raise PromptTooLong(
                f"prompt is {len(prompt)} chars, budget for {spec.name!r} is {spec.char_budget}"
            )
        client = self._clients[spec.name]
        policy = spec.retry_policy
        last_error = ""
        for attempt in range(1, policy.max_attempts + 1):
            start = time.perf_counter()
            try:
                with self._semaphores[spec.name]:
                    text = client.complete(prompt, params, attempt)
            except _TransientFailure as exc:
                last_error = str(exc)
                self.call_log.append(
                    CallRecord(spec.name, params.seed, time.perf_counter() - start,
                               ok=False, attempt=attempt, error=last_error)
                )
                if attempt < policy.max_attempts:
                    self._sleep(policy.delay(attempt))
                continue
            except (BackendUnavailable, MalformedResponse) as exc:
                self.call_log.append(
                    CallRecord(spec.name, params.seed, time.perf_counter() - start,
                               ok=False, attempt=attempt, error=str(exc))
                )
                raise
            self.call_log.append(
                CallRecord(spec.name, params.seed, time.perf_counter() - start,
                           ok=True, attempt=attempt)
            )
            return text
        raise BackendUnavailable(
            f"backend {spec.name!r} failed after {policy.max_attempts} attempts: {last_error}"
        )

    def complete_ensemble(
        self,
        backends: list[BackendSpec | str],
        prompt: str,
        params_per_call: list[SamplingParams],
    ) -> EnsembleResult:
        """Fan one prompt out to every (backend, params) combination.

        Partial failures yield partial results plus an error list; only a
        fully failed fan-out raises AllBackendsFailed.
        """
        if not backends:
            raise AllBackendsFailed("no backends supplied")
        if not params_per_call:
            raise InvariantError("params_per_call must be non-empty")
        specs = [self._resolve(b) for b in backends]
        tasks = [(spec, params) for spec in specs for params in params_per_call]

        completions: list[Completion] = []
        errors: list[EnsembleError] = []
        lock = threading.Lock()

        def _run(spec: BackendSpec, params: SamplingParams) -> None:
            try:
                text = self.complete(spec, prompt, params)
            except (BackendUnavailable, MalformedResponse, PromptTooLong) as exc:
                with lock:
                    errors.append(EnsembleError(spec.name, params.seed, str(exc)))
                return
            with lock:
                completions.append(Completion(spec.name, params.seed, text))

        max_workers = min(32, sum(s.concurrency_limit for s in specs))
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run, spec, params) for spec, params in tasks]
            for future in futures:
                future.result()

        completions.sort(key=lambda c: (c.backend, c.seed))
        errors.sort(key=lambda e: (e.backend, e.seed))
        if not completions:
            raise AllBackendsFailed(
                "; ".join(f"{e.backend}(seed={e.seed}): {e.message}" for e in errors)
                or "no completions produced"
            )
        return EnsembleResult(completions=completions, errors=errors)
