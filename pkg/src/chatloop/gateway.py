"""Uniform access to chat-completion endpoints.

Two endpoint kinds share one call surface: `remote` speaks the
OpenAI-compatible HTTP protocol (POST <base_url>/chat/completions) with
bounded retries and exponential backoff; `stub` replays a registered script
deterministically, which lets the whole pipeline run offline.

A gateway-wide semaphore caps in-flight calls at the configured concurrency
limit.  Auth tokens are read from the environment variable named on the
endpoint and never persisted.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any

import httpx

from .errors import (
    DuplicateScript,
    EndpointUnreachable,
    InvalidScript,
    LogprobsUnsupported,
    MalformedResponse,
)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionParams:
    """Sampling parameters for one call.

    `attempt` is the regeneration attempt index of the call (0 for the first
    response).  Remote endpoints ignore it; stub scripts may key a quality
    ladder on it.
    """

    temperature: float = 0.7
    max_tokens: int = 512
    attempt: int = 0


@dataclass(frozen=True)
class CompletionResult:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None  # natural log base
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class EndpointRef:
    """Handle to one model endpoint; plain data, resolvable by any gateway."""

    id: str
    kind: str  # remote | stub
    model_name: str
    base_url: str | None = None
    auth_token_env: str | None = None
    supports_logprobs: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "model_name": self.model_name,
            "base_url": self.base_url,
            "auth_token_env": self.auth_token_env,
            "supports_logprobs": self.supports_logprobs,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EndpointRef":
        return cls(
            id=str(d["id"]),
            kind=str(d["kind"]),
            model_name=str(d["model_name"]),
            base_url=d.get("base_url"),
            auth_token_env=d.get("auth_token_env"),
            supports_logprobs=bool(d.get("supports_logprobs", False)),
        )


@dataclass(frozen=True)
class StubRule:
    """One scripted reply; a rule with no match constraints is a catch-all.

    Rules are checked in order against the conversation: `last_user_contains`
    matches a substring of the most recent user message (`_all` requires
    every listed substring), `min_messages` requires at least that many
    messages in the conversation.  `echo_last_user` replies with the last
    user message verbatim instead of `reply`.
    """

    reply: str = ""
    last_user_contains: str | None = None
    last_user_contains_all: tuple[str, ...] | None = None
    min_messages: int | None = None
    echo_last_user: bool = False

    @property
    def is_catch_all(self) -> bool:
        return self.last_user_contains is None and self.last_user_contains_all is None and self.min_messages is None

    def matches(self, messages: list[ChatMessage]) -> bool:
        if self.min_messages is not None and len(messages) < self.min_messages:
            return False
        needles: list[str] = []
        if self.last_user_contains is not None:
            needles.append(self.last_user_contains)
        if self.last_user_contains_all is not None:
            needles.extend(self.last_user_contains_all)
        if needles:
            last_user = next((m.content for m in reversed(messages) if m.role == "user"), "")
            if any(needle not in last_user for needle in needles):
                return False
        return True


@dataclass(frozen=True)
class StubScript:
    """Deterministic canned endpoint: same conversation + attempt in, same text out.

    Rules are consulted first; `quality_ladder` (regeneration attempt index
    -> reply) is the fallback for conversations no rule matches, modelling a
    chatbot that improves across attempts.  Attempts past the last rung
    repeat it.  `token_scoring` is an ordered list of (substring-or-None,
    per-token logprob) pairs enabling offline log-probability scoring;
    providing it marks the stub logprob-capable.
    """

    id: str
    rules: tuple[StubRule, ...] = ()
    quality_ladder: dict[int, str] = field(default_factory=dict)
    token_scoring: tuple[tuple[str | None, float], ...] | None = None

    def reply_for(self, messages: list[ChatMessage], attempt: int) -> str:
        for rule in self.rules:
            if rule.matches(messages):
                if rule.echo_last_user:
                    return next((m.content for m in reversed(messages) if m.role == "user"), "")
                return rule.reply
        if self.quality_ladder:
            rung = min(attempt, max(self.quality_ladder))
            if rung in self.quality_ladder:
                return self.quality_ladder[rung]
        raise InvalidScript(f"script {self.id!r}: no rule matched; scripts must stay total")

    def logprob_for(self, token_text: str) -> float:
        assert self.token_scoring is not None
        for pattern, lp in self.token_scoring:
            if pattern is None or pattern in token_text:
                return lp
        raise InvalidScript(f"script {self.id!r}: token_scoring has no catch-all entry")


class Telemetry:
    """Thread-safe per-endpoint call counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: dict[str, dict[str, int]] = {}

    def record(self, endpoint_id: str, *, calls: int = 0, retries: int = 0, failures: int = 0) -> None:
        with self._lock:
            c = self._counts.setdefault(endpoint_id, {"calls": 0, "retries": 0, "failures": 0})
            c["calls"] += calls
            c["retries"] += retries
            c["failures"] += failures

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {k: dict(v) for k, v in self._counts.items()}

    def calls(self, endpoint_id: str) -> int:
        with self._lock:
            return self._counts.get(endpoint_id, {}).get("calls", 0)


class Gateway:
    """Shared, thread-safe front door to every model endpoint in a run."""

    def __init__(
        self,
        concurrency_limit: int = 4,
        max_retries: int = 3,
        retry_backoff: float = 1.0,
        request_timeout: float = 30.0,
        sleep=time.sleep,
    ) -> None:
        self.concurrency_limit = concurrency_limit
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.request_timeout = request_timeout
        self.telemetry = Telemetry()
        self._sleep = sleep
        self._semaphore = threading.Semaphore(concurrency_limit)
        self._scripts: dict[str, StubScript] = {}
        self._lock = threading.Lock()

    # -- stub registry ------------------------------------------------------

    def register_stub(self, script: StubScript) -> EndpointRef:
        """Register a script and return a stub endpoint that replays it."""
        if not script.rules and not script.quality_ladder:
            raise InvalidScript(f"script {script.id!r}: empty script")
        # totality: a final catch-all rule, or a ladder that answers attempt 0
        has_catch_all = bool(script.rules) and script.rules[-1].is_catch_all
        has_base_rung = 0 in script.quality_ladder
        if not has_catch_all and not has_base_rung:
            raise InvalidScript(f"script {script.id!r}: needs a final catch-all rule or a ladder rung 0")
        if script.token_scoring is not None and (
            not script.token_scoring or script.token_scoring[-1][0] is not None
        ):
            raise InvalidScript(f"script {script.id!r}: token_scoring must end with a catch-all entry")
        with self._lock:
            if script.id in self._scripts:
                raise DuplicateScript(f"script id {script.id!r} already registered")
            self._scripts[script.id] = script
        return EndpointRef(
            id=f"stub:{script.id}",
            kind="stub",
            model_name=script.id,
            supports_logprobs=script.token_scoring is not None,
        )

    def has_stub(self, script_id: str) -> bool:
        with self._lock:
            return script_id in self._scripts

    def _script_for(self, endpoint: EndpointRef) -> StubScript:
        with self._lock:
            script = self._scripts.get(endpoint.model_name)
        if script is None:
            raise EndpointUnreachable(f"stub script {endpoint.model_name!r} is not registered")
        return script

    # -- completion ---------------------------------------------------------

    def complete_chat(
        self,
        endpoint: EndpointRef,
        messages: list[ChatMessage],
        params: CompletionParams | None = None,
        want_logprobs: bool = False,
    ) -> CompletionResult:
        """Return the endpoint's reply for a conversation.

        Raises EndpointUnreachable after retries are exhausted,
        MalformedResponse on an undecodable payload, and LogprobsUnsupported
        when logprobs are requested from an endpoint without them.
        """
        if not messages:
            raise ValueError("messages must be non-empty")
        if want_logprobs and not endpoint.supports_logprobs:
            raise LogprobsUnsupported(f"endpoint {endpoint.id} does not support logprobs")
        params = params or CompletionParams()
        with self._semaphore:
            self.telemetry.record(endpoint.id, calls=1)
            if endpoint.kind == "stub":
                return self._complete_stub(endpoint, messages, params, want_logprobs)
            return self._complete_remote(endpoint, messages, params, want_logprobs)

    def _complete_stub(
        self,
        endpoint: EndpointRef,
        messages: list[ChatMessage],
        params: CompletionParams,
        want_logprobs: bool,
    ) -> CompletionResult:
        script = self._script_for(endpoint)
        text = script.reply_for(messages, params.attempt)
        logprobs = None
        if want_logprobs:
            logprobs = tuple((tok, script.logprob_for(tok)) for tok in text.split())
        prompt_tokens = sum(len(m.content.split()) for m in messages)
        return CompletionResult(
            text=text,
            token_logprobs=logprobs,
            prompt_tokens=prompt_tokens,
            completion_tokens=len(text.split()),
        )

    def _complete_remote(
        self,
        endpoint: EndpointRef,
        messages: list[ChatMessage],
        params: CompletionParams,
        want_logprobs: bool,
    ) -> CompletionResult:
        if not endpoint.base_url:
            raise EndpointUnreachable(f"remote endpoint {endpoint.id} has no base_url")
        payload: dict[str, Any] = {
            "model": endpoint.model_name,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if want_logprobs:
            payload["logprobs"] = True
        data = self._post_with_retries(endpoint, "/chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
            usage = data.get("usage", {})
            logprobs = None
            if want_logprobs:
                entries = choice["logprobs"]["content"]
                logprobs = tuple((e["token"], float(e["logprob"])) for e in entries)
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"endpoint {endpoint.id}: cannot decode completion payload: {exc}") from exc
        return CompletionResult(
            text=text,
            token_logprobs=logprobs,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    # -- token scoring for perplexity ----------------------------------------

    def score_tokens(self, endpoint: EndpointRef, context: str, continuation: str) -> tuple[tuple[str, float], ...]:
        """Log-probabilities of `continuation` tokens conditioned on `context`.

        Remote endpoints use the legacy echo-scored completions protocol
        (POST <base_url>/completions with echo + logprobs); stubs tokenize on
        whitespace and score via their token_scoring table.
        """
        if not endpoint.supports_logprobs:
            raise LogprobsUnsupported(f"endpoint {endpoint.id} does not support logprobs")
        with self._semaphore:
            self.telemetry.record(endpoint.id, calls=1)
            if endpoint.kind == "stub":
                script = self._script_for(endpoint)
                return tuple((tok, script.logprob_for(tok)) for tok in continuation.split())
            payload = {
                "model": endpoint.model_name,
                "prompt": context + continuation,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
            }
            data = self._post_with_retries(endpoint, "/completions", payload)
            try:
                lp = data["choices"][0]["logprobs"]
                tokens: list[str] = lp["tokens"]
                token_logprobs: list[float | None] = lp["token_logprobs"]
                offsets: list[int] = lp["text_offset"]
            except (KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"endpoint {endpoint.id}: cannot decode logprobs payload: {exc}") from exc
            start = len(context)
            out = [
                (tok, float(logp))
                for tok, logp, off in zip(tokens, token_logprobs, offsets)
                if off >= start and logp is not None
            ]
            return tuple(out)

    # -- HTTP plumbing -------------------------------------------------------

    def _post_with_retries(self, endpoint: EndpointRef, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = endpoint.base_url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_token_env:
            token = os.environ.get(endpoint.auth_token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt > 0:
                self.telemetry.record(endpoint.id, retries=1)
                self._sleep(self.retry_backoff * (2 ** (attempt - 1)))
            try:
                resp = httpx.post(url, json=payload, headers=headers, timeout=self.request_timeout)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = EndpointUnreachable(f"{endpoint.id}: HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                self.telemetry.record(endpoint.id, failures=1)
                raise EndpointUnreachable(f"{endpoint.id}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except json.JSONDecodeError as exc:
                self.telemetry.record(endpoint.id, failures=1)
                raise MalformedResponse(f"{endpoint.id}: response is not JSON") from exc
        self.telemetry.record(endpoint.id, failures=1)
        raise EndpointUnreachable(f"{endpoint.id}: retries exhausted: {last_error}")


def remote_endpoint(
    id: str,
    base_url: str,
    model_name: str,
    auth_token_env: str | None = None,
    supports_logprobs: bool = False,
) -> EndpointRef:
    return EndpointRef(
        id=id,
        kind="remote",
        model_name=model_name,
        base_url=base_url,
        auth_token_env=auth_token_env,
        supports_logprobs=supports_logprobs,
    )


def derive_endpoint(current: EndpointRef, new_model_name: str, new_id: str) -> EndpointRef:
    """Endpoint for a freshly trained model: same connection, new model name."""
    return replace(current, id=new_id, model_name=new_model_name)
