from __future__ import annotations

import threading

import pytest

from chatloop.errors import DuplicateScript, EndpointUnreachable, InvalidScript, LogprobsUnsupported, MalformedResponse
from chatloop.gateway import ChatMessage, CompletionParams, EndpointRef, Gateway, StubRule, StubScript, remote_endpoint

from mock_server import MockChatServer


def _msg(text: str) -> list[ChatMessage]:
    return [ChatMessage(role="user", content=text)]


def test_stub_echo_catch_all(gateway):
    endpoint = gateway.register_stub(StubScript(id="echo", rules=(StubRule(echo_last_user=True),)))
    assert gateway.complete_chat(endpoint, _msg("hi")).text == "hi"


def test_stub_is_deterministic(gateway):
    endpoint = gateway.register_stub(StubScript(id="s1", rules=(StubRule(reply="fixed"),)))
    first = gateway.complete_chat(endpoint, _msg("a"))
    second = gateway.complete_chat(endpoint, _msg("a"))
    assert first == second


def test_quality_ladder_by_attempt(gateway):
    endpoint = gateway.register_stub(StubScript(id="ladder", quality_ladder={0: "bad", 1: "good"}))
    assert gateway.complete_chat(endpoint, _msg("x"), CompletionParams(attempt=0)).text == "bad"
    assert gateway.complete_chat(endpoint, _msg("x"), CompletionParams(attempt=1)).text == "good"
    # attempts beyond the last rung repeat it
    assert gateway.complete_chat(endpoint, _msg("x"), CompletionParams(attempt=5)).text == "good"


def test_rule_matching_order_and_constraints(gateway):
    script = StubScript(
        id="rules",
        rules=(
            StubRule(last_user_contains="magic", reply="matched"),
            StubRule(min_messages=3, reply="deep"),
            StubRule(reply="default"),
        ),
    )
    endpoint = gateway.register_stub(script)
    assert gateway.complete_chat(endpoint, _msg("say the magic word")).text == "matched"
    three = [ChatMessage("user", "a"), ChatMessage("assistant", "b"), ChatMessage("user", "c")]
    assert gateway.complete_chat(endpoint, three).text == "deep"
    assert gateway.complete_chat(endpoint, _msg("plain")).text == "default"


def test_register_duplicate_script_rejected(gateway):
    gateway.register_stub(StubScript(id="dup", rules=(StubRule(reply="x"),)))
    with pytest.raises(DuplicateScript):
        gateway.register_stub(StubScript(id="dup", rules=(StubRule(reply="y"),)))


def test_register_script_without_catch_all_rejected(gateway):
    with pytest.raises(InvalidScript):
        gateway.register_stub(StubScript(id="partial", rules=(StubRule(last_user_contains="x", reply="y"),)))


def test_logprobs_unsupported_raises(gateway):
    endpoint = gateway.register_stub(StubScript(id="nolp", rules=(StubRule(reply="x"),)))
    assert not endpoint.supports_logprobs
    with pytest.raises(LogprobsUnsupported):
        gateway.complete_chat(endpoint, _msg("x"), want_logprobs=True)


def test_stub_logprobs_from_token_scoring(gateway):
    script = StubScript(id="lp", rules=(StubRule(reply="two words"),), token_scoring=((None, -0.25),))
    endpoint = gateway.register_stub(script)
    result = gateway.complete_chat(endpoint, _msg("x"), want_logprobs=True)
    assert result.token_logprobs == (("two", -0.25), ("words", -0.25))
    assert all(lp <= 0 for _, lp in result.token_logprobs)


def test_remote_retries_on_429_then_succeeds(gateway):
    with MockChatServer([429, 429, "recovered"]) as server:
        endpoint = remote_endpoint("r1", server.base_url, "test-model")
        result = gateway.complete_chat(endpoint, _msg("hello"))
    assert result.text == "recovered"
    snapshot = gateway.telemetry.snapshot()["r1"]
    assert snapshot["retries"] == 2
    assert snapshot["failures"] == 0


def test_remote_retries_exhausted_raises(gateway):
    with MockChatServer([429]) as server:
        endpoint = remote_endpoint("r2", server.base_url, "test-model")
        with pytest.raises(EndpointUnreachable):
            gateway.complete_chat(endpoint, _msg("hello"))
    assert gateway.telemetry.snapshot()["r2"]["failures"] == 1


def test_remote_nonretryable_status_fails_fast(gateway):
    with MockChatServer([400]) as server:
        endpoint = remote_endpoint("r3", server.base_url, "test-model")
        with pytest.raises(EndpointUnreachable):
            gateway.complete_chat(endpoint, _msg("hello"))
    assert gateway.telemetry.snapshot()["r3"]["retries"] == 0


def test_remote_sends_auth_header_from_env(gateway, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN_ENV", "sekrit")
    with MockChatServer(["ok"]) as server:
        endpoint = remote_endpoint("r4", server.base_url, "m", auth_token_env="TEST_TOKEN_ENV")
        gateway.complete_chat(endpoint, _msg("x"))
        auth = server.headers_seen[0].get("Authorization")
    assert auth == "Bearer sekrit"


def test_remote_request_payload_shape(gateway):
    with MockChatServer(["ok"]) as server:
        endpoint = remote_endpoint("r5", server.base_url, "my-model")
        gateway.complete_chat(endpoint, _msg("ping"), CompletionParams(temperature=0.3, max_tokens=99))
        body = server.requests[0]
    assert body["model"] == "my-model"
    assert body["messages"] == [{"role": "user", "content": "ping"}]
    assert body["temperature"] == 0.3
    assert body["max_tokens"] == 99


def test_concurrency_never_exceeds_limit():
    gateway = Gateway(concurrency_limit=3, max_retries=1, sleep=lambda s: None)
    with MockChatServer(["ok"], delay=0.05) as server:
        endpoint = remote_endpoint("cap", server.base_url, "m")
        threads = [
            threading.Thread(target=gateway.complete_chat, args=(endpoint, _msg(f"m{i}")))
            for i in range(12)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        observed = server.max_in_flight
    assert observed <= 3
    assert gateway.telemetry.snapshot()["cap"]["calls"] == 12


def test_malformed_payload_raises():
    gateway = Gateway(max_retries=1, sleep=lambda s: None)
    with MockChatServer([{"unexpected": "shape"}]) as server:
        endpoint = remote_endpoint("bad", server.base_url, "m")
        with pytest.raises(MalformedResponse):
            gateway.complete_chat(endpoint, _msg("x"))


def test_stub_missing_registration_unreachable(gateway):
    ghost = EndpointRef(id="stub:ghost", kind="stub", model_name="ghost")
    with pytest.raises(EndpointUnreachable):
        gateway.complete_chat(ghost, _msg("x"))


def test_empty_messages_rejected(gateway):
    endpoint = gateway.register_stub(StubScript(id="e", rules=(StubRule(reply="x"),)))
    with pytest.raises(ValueError):
        gateway.complete_chat(endpoint, [])
