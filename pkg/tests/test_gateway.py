import json
import threading

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import RuleBackend
from preconsult.errors import (
    BackendUnavailableError,
    ConfigError,
    ProtocolError,
    ScriptMissError,
)
from preconsult.gateway import (
    BackendConfig,
    ChatMessage,
    ChatRequest,
    HttpOpenAiBackend,
    LlmGateway,
    ScriptedBackend,
    build_backend,
    fingerprint,
    script_from_calls,
)


def request(role="virtual_patient", user="hello", system="sys"):
    return ChatRequest(
        role_name=role,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
    )


class TestFingerprint:
    @settings(max_examples=100, deadline=None)
    @given(st.text(min_size=1), st.text(min_size=1))
    def test_distinct_users_distinct_fingerprints(self, a, b):
        fa = fingerprint(request(user=a))
        fb = fingerprint(request(user=b))
        assert (fa == fb) == (a == b)

    def test_role_name_included(self):
        assert fingerprint(request(role="monitor")) != fingerprint(request(role="triager"))

    def test_concatenation_cannot_collide(self):
        # the same joined text split differently must not collide
        r1 = ChatRequest(
            role_name="x",
            messages=(ChatMessage("system", "s"), ChatMessage("user", "ab"), ChatMessage("user", "c")),
        )
        r2 = ChatRequest(
            role_name="x",
            messages=(ChatMessage("system", "s"), ChatMessage("user", "a"), ChatMessage("user", "bc")),
        )
        assert fingerprint(r1) != fingerprint(r2)

    def test_deterministic_hex(self):
        fp = fingerprint(request())
        assert fp == fingerprint(request())
        assert len(fp) == 64
        int(fp, 16)


class TestScriptedBackend:
    def test_hit_and_miss(self):
        backend = ScriptedBackend()
        backend.record("virtual_patient", "hello", "Hi there.")
        assert backend.send(request()).text == "Hi there."
        with pytest.raises(ScriptMissError):
            backend.send(request(user="different"))

    def test_dir_roundtrip(self, tmp_path):
        backend = ScriptedBackend()
        backend.record("virtual_patient", "hello", "Hi.")
        backend.record("monitor", "assess", json.dumps({"t11": 1}))
        backend.write_dir(tmp_path)
        assert sorted(p.name for p in tmp_path.glob("*.json")) == [
            "monitor.json",
            "virtual_patient.json",
        ]
        reloaded = ScriptedBackend.from_dir(tmp_path)
        assert reloaded.send(request()).text == "Hi."

    def test_record_replay_from_call_log(self):
        gateway = LlmGateway(RuleBackend())
        live = gateway.complete(request(user="what hurts?"))
        replay = LlmGateway(script_from_calls(gateway.calls))
        assert replay.complete(request(user="what hurts?")).text == live.text
        with pytest.raises(ScriptMissError):
            replay.complete(request(user="never recorded"))


class FakeResponse:
    def __init__(self, status, body):
        self.status_code = status
        self._body = body

    def json(self):
        if isinstance(self._body, str):
            return json.loads(self._body)
        return self._body


class FakePoster:
    """Stand-in transport; yields scripted responses or raises exceptions."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def __call__(self, url, headers, payload, timeout_s):
        self.calls += 1
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        status, body = outcome
        return FakeResponse(status, body)


def ok_body(text="fine"):
    return {"choices": [{"message": {"content": text}}]}


def http_backend(poster, **overrides):
    config = BackendConfig(
        kind="http_openai_compatible",
        base_url="http://backend.test/v1",
        model_id="test-model",
        max_retries=2,
        backoff_base_ms=1,
        **overrides,
    )
    return HttpOpenAiBackend(config, post=poster, sleep=lambda _s: None)


class TestHttpRetries:
    def test_success_first_try(self):
        poster = FakePoster([(200, ok_body("hello"))])
        assert http_backend(poster).send(request()).text == "hello"
        assert poster.calls == 1

    def test_retryable_statuses_then_success(self):
        poster = FakePoster([(503, {}), (429, {}), (200, ok_body())])
        assert http_backend(poster).send(request()).text == "fine"
        assert poster.calls == 3

    def test_exhaustion_counts_attempts(self):
        poster = FakePoster([(500, {})] * 5)
        with pytest.raises(BackendUnavailableError) as excinfo:
            http_backend(poster).send(request())
        assert poster.calls == 3  # 1 + max_retries
        assert excinfo.value.attempts == 3

    def test_client_error_not_retried(self):
        poster = FakePoster([(400, {"error": "bad request"})])
        with pytest.raises(ProtocolError):
            http_backend(poster).send(request())
        assert poster.calls == 1

    def test_timeout_retried_then_success(self):
        poster = FakePoster([requests.Timeout("slow"), (200, ok_body())])
        assert http_backend(poster).send(request()).text == "fine"
        assert poster.calls == 2

    def test_connection_error_retried(self):
        poster = FakePoster([requests.ConnectionError("refused"), (200, ok_body())])
        assert http_backend(poster).send(request()).text == "fine"
        assert poster.calls == 2

    def test_malformed_body_is_protocol_error(self):
        poster = FakePoster([(200, "this is not json")])
        with pytest.raises(ProtocolError):
            http_backend(poster).send(request())
        assert poster.calls == 1

    def test_payload_carries_role_temperature_and_model(self):
        seen = {}

        def poster(url, headers, payload, timeout_s):
            seen.update(payload)
            seen["url"] = url
            return FakeResponse(200, ok_body())

        http_backend(poster).send(
            ChatRequest(
                role_name="monitor",
                messages=(ChatMessage("system", "s"), ChatMessage("user", "score these")),
                temperature=0.0,
            )
        )
        assert seen["model"] == "test-model"
        assert seen["temperature"] == 0.0
        assert seen["url"].endswith("/chat/completions")
        assert seen["messages"] == [
            {"role": "system", "content": "s"},
            {"role": "user", "content": "score these"},
        ]

    def test_api_key_header_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_GW_KEY", "sekrit")
        seen = {}

        def poster(url, headers, payload, timeout_s):
            seen.update(headers)
            return FakeResponse(200, ok_body())

        http_backend(poster, api_key_env="TEST_GW_KEY").send(request())
        assert seen["Authorization"] == "Bearer sekrit"


class TestGateway:
    def test_call_log_attributes_roles(self):
        gateway = LlmGateway(RuleBackend())
        gateway.complete(request(role="inquirer", user="Focus: t11 [round 1]"))
        gateway.complete(request(role="virtual_patient", user="answer?"))
        assert [c.role_name for c in gateway.calls] == ["inquirer", "virtual_patient"]
        assert len(gateway.calls_for_role("inquirer")) == 1
        gateway.reset_log()
        assert gateway.calls == []

    def test_failed_calls_logged_not_ok(self):
        gateway = LlmGateway(ScriptedBackend())
        with pytest.raises(ScriptMissError):
            gateway.complete(request())
        assert [c.ok for c in gateway.calls] == [False]

    def test_concurrency_cap_enforced(self):
        backend = RuleBackend(latency=0.02)
        gateway = LlmGateway(backend, max_concurrent_requests=3)

        def worker(i):
            gateway.complete(request(role="virtual_patient", user=f"q{i}"))

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert backend.max_in_flight <= 3
        assert len(gateway.calls) == 12

    def test_invalid_cap_rejected(self):
        with pytest.raises(ConfigError):
            LlmGateway(RuleBackend(), max_concurrent_requests=0)


class TestBackendConfig:
    def test_from_dict_roundtrip(self):
        config = BackendConfig.from_dict(
            {
                "kind": "http_openai_compatible",
                "base_url": "http://x/v1",
                "model_id": "m",
                "timeout_ms": 1000,
            }
        )
        assert BackendConfig.from_dict(config.to_dict()) == config

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind="quantum", base_url="http://x")

    def test_http_build_requires_base_url(self):
        with pytest.raises(ConfigError):
            build_backend(BackendConfig(kind="http_openai_compatible", base_url=""))

    def test_scripted_build_loads_directory(self, tmp_path):
        source = ScriptedBackend()
        source.record("virtual_patient", "hello", "Hi.")
        source.write_dir(tmp_path)
        backend = build_backend(
            BackendConfig(kind="scripted", script_dir=str(tmp_path))
        )
        assert backend.send(request()).text == "Hi."
