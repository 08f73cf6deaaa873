"""Run-settings file loading (YAML or JSON) and built-in offline stub scripts.

A settings file names the three agent endpoints, the generation knobs, the
trainer hook, and optionally an arena system pair.  Stub endpoints reference
registered script ids; the built-in demo scripts let every CLI command run
end to end with no network.  Secrets are only ever read from environment
variables named in endpoint definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .curriculum import RunMode, TrainerHook
from .gateway import EndpointRef, Gateway, StubRule, StubScript
from .models import GenerationConfig


class ConfigError(ValueError):
    """A settings file is missing or names an invalid field."""


@dataclass
class ArenaSettings:
    system_1: dict[str, Any]
    system_2: dict[str, Any]
    seed: int = 0
    votes_path: str = "arena/votes.jsonl"


@dataclass
class RunSettings:
    run_id: str
    mode: RunMode
    run_dir: str
    dataset_dir: str | None
    generation: GenerationConfig
    endpoints: dict[str, dict[str, Any]]
    trainer: TrainerHook
    arena: ArenaSettings | None = None
    raw: dict[str, Any] = field(default_factory=dict)


def _apply_override(data: dict[str, Any], dotted: str, value: str) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {key!r} is not a mapping")
    node[keys[-1]] = yaml.safe_load(value)


def load_settings(path: str | Path, overrides: list[str] | None = None) -> RunSettings:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no config file at {path}")
    text = path.read_text(encoding="utf-8")
    data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for override in overrides or []:
        if "=" not in override:
            raise ConfigError(f"override {override!r}: expected key.path=value")
        dotted, value = override.split("=", 1)
        _apply_override(data, dotted, value)
    return settings_from_dict(data)


def settings_from_dict(data: dict[str, Any]) -> RunSettings:
    try:
        mode = RunMode(str(data.get("mode", "full")).lower())
    except ValueError:
        raise ConfigError(f"mode: {data.get('mode')!r} is not one of {[m.value for m in RunMode]}")
    generation = GenerationConfig.from_dict(data.get("generation", {}))
    endpoints = data.get("endpoints", {})
    for name in ("chatbot", "user_agent"):
        if name not in endpoints:
            raise ConfigError(f"endpoints.{name}: required endpoint missing")
    if mode.uses_critic and "critic" not in endpoints:
        raise ConfigError(f"endpoints.critic: required for mode {mode.value}")
    trainer_data = data.get("trainer", {"kind": "passthrough_stub"})
    trainer = TrainerHook(
        kind=str(trainer_data.get("kind", "passthrough_stub")),
        command=trainer_data.get("command"),
        timeout=float(trainer_data.get("timeout", 3600.0)),
        endpoint_sequence=tuple(trainer_data.get("endpoint_sequence", [])),
    )
    if trainer.kind not in ("external_command", "passthrough_stub"):
        raise ConfigError(f"trainer.kind: {trainer.kind!r} must be external_command or passthrough_stub")
    if trainer.kind == "external_command" and not trainer.command:
        raise ConfigError("trainer.command: required for external_command trainer")
    arena = None
    if "arena" in data:
        arena_data = data["arena"]
        for name in ("system_1", "system_2"):
            if name not in arena_data:
                raise ConfigError(f"arena.{name}: required endpoint missing")
        arena = ArenaSettings(
            system_1=arena_data["system_1"],
            system_2=arena_data["system_2"],
            seed=int(arena_data.get("seed", 0)),
            votes_path=str(arena_data.get("votes_path", "arena/votes.jsonl")),
        )
    return RunSettings(
        run_id=str(data.get("run_id", "run")),
        mode=mode,
        run_dir=str(data.get("run_dir", "runs/run")),
        dataset_dir=data.get("dataset_dir"),
        generation=generation,
        endpoints=endpoints,
        trainer=trainer,
        arena=arena,
        raw=data,
    )


def endpoint_from_config(gateway: Gateway, spec: dict[str, Any], default_id: str) -> EndpointRef:
    kind = spec.get("kind", "remote")
    if kind == "stub":
        name = spec.get("model_name")
        if not name:
            raise ConfigError(f"endpoints.{default_id}.model_name: stub endpoints need a script id")
        if not gateway.has_stub(name):
            raise ConfigError(f"endpoints.{default_id}: stub script {name!r} is not registered")
        return EndpointRef(
            id=spec.get("id", f"stub:{name}"),
            kind="stub",
            model_name=name,
            supports_logprobs=bool(spec.get("supports_logprobs", False)),
        )
    if kind == "remote":
        if not spec.get("base_url"):
            raise ConfigError(f"endpoints.{default_id}.base_url: required for remote endpoints")
        return EndpointRef(
            id=spec.get("id", default_id),
            kind="remote",
            model_name=str(spec.get("model_name", "")),
            base_url=spec["base_url"],
            auth_token_env=spec.get("auth_token_env"),
            supports_logprobs=bool(spec.get("supports_logprobs", False)),
        )
    raise ConfigError(f"endpoints.{default_id}.kind: {kind!r} must be remote or stub")


def build_gateway(config: GenerationConfig) -> Gateway:
    gateway = Gateway(
        concurrency_limit=config.concurrency_limit,
        max_retries=config.max_retries,
        retry_backoff=config.retry_backoff,
        request_timeout=config.request_timeout,
    )
    register_builtin_stubs(gateway)
    return gateway


_DEMO_WEAK_REPLY = (
    "Interesting. By the way, the weather has been quite changeable lately, has it not?"
)
_DEMO_STRONG_REPLY = (
    "That sounds genuinely fascinating. How did you first get into it, and which part "
    "of it do you enjoy the most these days? I would love to hear the story."
)


def register_builtin_stubs(gateway: Gateway) -> None:
    """Demo scripts for fully offline runs: a chatbot that improves on feedback,
    an improved fine-tuned variant, a user agent, a critic, and a PPL scorer."""
    greeting_rule = StubRule(
        last_user_contains="Greet the user",
        reply="Hello! Lovely to meet you. Could you introduce yourself briefly?",
    )
    demo = [
        StubScript(
            id="demo_chatbot",
            rules=(greeting_rule,),
            quality_ladder={0: _DEMO_WEAK_REPLY, 1: _DEMO_STRONG_REPLY},
        ),
        StubScript(
            id="demo_chatbot_improved",
            rules=(greeting_rule,),
            quality_ladder={0: _DEMO_STRONG_REPLY},
        ),
        StubScript(
            id="demo_user",
            rules=(
                StubRule(
                    min_messages=3,
                    reply="Glad you ask. Work keeps me busy, but my hobbies keep me sane; there is always a story there.",
                ),
                StubRule(reply="Hello! I will introduce myself briefly: you can find my line of work and hobbies interesting, I hope."),
            ),
        ),
        StubScript(
            id="demo_critic",
            rules=(
                StubRule(
                    last_user_contains="weather has been quite changeable",
                    reply="Interest: 2 - generic small talk\nRelevance: 2 - ignores the user's background\nValue: 3 - adds little",
                ),
                StubRule(reply="Interest: 5 - invites the user to share more\nRelevance: 4 - builds on their intro\nValue: 4 - moves the chat forward"),
            ),
        ),
        StubScript(
            id="demo_scorer",
            rules=(StubRule(reply=""),),
            token_scoring=((None, -1.3862943611198906),),  # ln(1/4) per token
        ),
    ]
    for script in demo:
        if not gateway.has_stub(script.id):
            gateway.register_stub(script)
