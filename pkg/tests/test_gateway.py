"""Gateway behavior: mock determinism, retries, fan-out, rate limiting."""

import json
import threading

import httpx
import pytest

from sqldistill.errors import (
    AllBackendsFailed,
    BackendUnavailable,
    InvariantError,
    MalformedResponse,
    PromptTooLong,
)
from sqldistill.gateway import (
    BackendSpec,
    LlmGateway,
    MockBackend,
    RetryPolicy,
    Role,
    SamplingParams,
    prompt_fingerprint,
)

FAST = RetryPolicy(max_attempts=3, backoff=(0.0,))


def _fixture(path, records):
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return str(path)


def _mock_spec(tmp_path, records, name="mock-a", role=Role.NL_GENERATOR, **kwargs):
    fixture = _fixture(tmp_path / f"{name}.jsonl", records)
    return BackendSpec(name, "mock", role, fixture_path=fixture, retry_policy=FAST, **kwargs)


class TestSamplingParams:
    def test_defaults_match_documented_config(self):
        params = SamplingParams()
        assert (params.temperature, params.top_k, params.top_p, params.max_tokens) == (
            0.5,
            40,
            0.9,
            2048,
        )

    def test_validation(self):
        with pytest.raises(InvariantError):
            SamplingParams(temperature=-0.1)
        with pytest.raises(InvariantError):
            SamplingParams(top_k=0)
        with pytest.raises(InvariantError):
            SamplingParams(top_p=1.5)


class TestBackendSpec:
    def test_mock_requires_fixture(self):
        with pytest.raises(InvariantError):
            BackendSpec("m", "mock", Role.JUROR)

    def test_concurrency_minimum(self, tmp_path):
        fixture = _fixture(tmp_path / "f.jsonl", [])
        with pytest.raises(InvariantError):
            BackendSpec("m", "mock", Role.JUROR, concurrency_limit=0, fixture_path=fixture)


class TestMockCompletion:
    def test_exact_hash_match(self, tmp_path):
        prompt = "the exact prompt"
        spec = _mock_spec(
            tmp_path,
            [{"prompt_hash": prompt_fingerprint(prompt), "seed": 5, "completion": "answer"}],
        )
        gateway = LlmGateway([spec])
        assert gateway.complete(spec, prompt, SamplingParams(seed=5)) == "answer"

    def test_seed_variants_differ(self, tmp_path):
        spec = _mock_spec(
            tmp_path,
            [{"prompt_contains": "greet", "completion": "hello {{seed}}"}],
        )
        gateway = LlmGateway([spec])
        one = gateway.complete(spec, "greet me", SamplingParams(seed=1))
        two = gateway.complete(spec, "greet me", SamplingParams(seed=2))
        assert one == "hello 1" and two == "hello 2"
        assert one != two

    def test_identical_prompt_and_seed_identical_completion(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "c {{seed}}"}])
        gateway = LlmGateway([spec])
        results = {
            gateway.complete(spec, "anything", SamplingParams(seed=9)) for _ in range(5)
        }
        assert results == {"c 9"}

    def test_conjunctive_contains(self, tmp_path):
        spec = _mock_spec(
            tmp_path,
            [
                {"prompt_contains": ["alpha", "beta"], "completion": "both"},
                {"prompt_contains": ["alpha"], "completion": "just alpha"},
            ],
        )
        gateway = LlmGateway([spec])
        assert gateway.complete(spec, "alpha and beta", SamplingParams()) == "both"
        assert gateway.complete(spec, "alpha only", SamplingParams()) == "just alpha"

    def test_fixture_miss_is_unavailable(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "specific", "completion": "x"}])
        gateway = LlmGateway([spec])
        with pytest.raises(BackendUnavailable, match="no fixture entry"):
            gateway.complete(spec, "other", SamplingParams())


class TestRetries:
    def test_all_attempts_fail_raises_unavailable(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "", "error": "unavailable"}])
        gateway = LlmGateway([spec])
        with pytest.raises(BackendUnavailable, match="after 3 attempts"):
            gateway.complete(spec, "p", SamplingParams(seed=3))
        assert gateway.call_log.count(backend="mock-a") == 3  # bounded by max_attempts

    def test_transient_failure_then_success(self, tmp_path):
        spec = _mock_spec(
            tmp_path, [{"prompt_contains": "", "completion": "ok", "fail_times": 1}]
        )
        gateway = LlmGateway([spec])
        assert gateway.complete(spec, "p", SamplingParams()) == "ok"
        records = gateway.call_log.records()
        assert [r.ok for r in records] == [False, True]
        assert [r.attempt for r in records] == [1, 2]

    def test_prompt_too_long(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "x"}], char_budget=10)
        gateway = LlmGateway([spec])
        with pytest.raises(PromptTooLong):
            gateway.complete(spec, "x" * 11, SamplingParams())

    def test_empty_prompt_rejected(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "x"}])
        gateway = LlmGateway([spec])
        with pytest.raises(InvariantError, match="non-empty"):
            gateway.complete(spec, "", SamplingParams())

    def test_proprietary_gate(self, tmp_path):
        spec = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "x"}],
                          proprietary=True)
        gateway = LlmGateway([spec])
        with pytest.raises(InvariantError, match="proprietary"):
            gateway.complete(spec, "p", SamplingParams())
        permissive = LlmGateway([spec], allow_proprietary=True)
        assert permissive.complete(spec, "p", SamplingParams()) == "x"


class TestEnsemble:
    def test_two_backends_two_seeds_four_completions(self, tmp_path):
        spec_a = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "a{{seed}}"}], "a")
        spec_b = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "b{{seed}}"}], "b")
        gateway = LlmGateway([spec_a, spec_b])
        result = gateway.complete_ensemble(
            [spec_a, spec_b], "p", [SamplingParams(seed=1), SamplingParams(seed=2)]
        )
        assert [(c.backend, c.seed, c.text) for c in result.completions] == [
            ("a", 1, "a1"),
            ("a", 2, "a2"),
            ("b", 1, "b1"),
            ("b", 2, "b2"),
        ]

    def test_partial_failure_yields_errors(self, tmp_path):
        good = _mock_spec(tmp_path, [{"prompt_contains": "", "completion": "fine"}], "good")
        bad = _mock_spec(tmp_path, [{"prompt_contains": "", "error": "down"}], "bad")
        gateway = LlmGateway([good, bad])
        result = gateway.complete_ensemble(
            [good, bad], "p", [SamplingParams(seed=1), SamplingParams(seed=2)]
        )
        assert len(result.completions) == 2
        assert {e.backend for e in result.errors} == {"bad"}
        assert len(result.errors) == 2

    def test_empty_backend_list(self, tmp_path):
        gateway = LlmGateway([])
        with pytest.raises(AllBackendsFailed):
            gateway.complete_ensemble([], "p", [SamplingParams()])

    def test_all_backends_down(self, tmp_path):
        bad = _mock_spec(tmp_path, [{"prompt_contains": "", "error": "down"}], "bad")
        gateway = LlmGateway([bad])
        with pytest.raises(AllBackendsFailed):
            gateway.complete_ensemble([bad], "p", [SamplingParams()])

    def test_concurrency_limit_never_exceeded(self, tmp_path):
        spec = _mock_spec(
            tmp_path,
            [{"prompt_contains": "", "completion": "x"}],
            "limited",
            concurrency_limit=2,
        )
        gateway = LlmGateway([spec])
        client = gateway.mock_client("limited")

        # slow the mock down so calls genuinely overlap
        original = client.complete
        gate = threading.Event()

        def slow_complete(prompt, params, attempt):
            gate.wait(0.01)
            return original(prompt, params, attempt)

        client.complete = slow_complete
        gateway.complete_ensemble(
            [spec], "p", [SamplingParams(seed=i) for i in range(16)]
        )
        assert client.max_in_flight <= 2
        assert client.max_in_flight >= 1


class TestHttpBackend:
    def _transport(self, handler):
        return httpx.MockTransport(handler)

    def test_successful_completion(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["messages"][0]["content"] == "ping"
            assert body["seed"] == 4
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "pong"}}]}
            )

        spec = BackendSpec("remote", "https://llm.test/v1/chat/completions",
                           Role.SQL_GENERATOR, retry_policy=FAST)
        gateway = LlmGateway([spec], transport=self._transport(handler))
        assert gateway.complete(spec, "ping", SamplingParams(seed=4)) == "pong"

    def test_5xx_exhausts_retries(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503, text="overloaded")

        spec = BackendSpec("remote", "https://llm.test/v1/chat/completions",
                           Role.SQL_GENERATOR, retry_policy=FAST)
        gateway = LlmGateway([spec], transport=self._transport(handler))
        with pytest.raises(BackendUnavailable):
            gateway.complete(spec, "ping", SamplingParams())
        assert len(calls) == 3

    def test_unparsable_body_is_malformed(self):
        def handler(request):
            return httpx.Response(200, json={"unexpected": True})

        spec = BackendSpec("remote", "https://llm.test/v1/chat/completions",
                           Role.SQL_GENERATOR, retry_policy=FAST)
        gateway = LlmGateway([spec], transport=self._transport(handler))
        with pytest.raises(MalformedResponse):
            gateway.complete(spec, "ping", SamplingParams())


class TestMockBackendDirect:
    def test_rules_load_and_match_order(self, tmp_path):
        spec = _mock_spec(
            tmp_path,
            [
                {"prompt_contains": "x", "seed": 1, "completion": "pinned"},
                {"prompt_contains": "x", "completion": "wild"},
            ],
        )
        backend = MockBackend(spec)
        assert backend.complete("x", SamplingParams(seed=1), 1) == "pinned"
        assert backend.complete("x", SamplingParams(seed=2), 1) == "wild"
