"""Critic-guided dialogue corpus generation for one curriculum iteration.

Each dialogue runs the chatbot against one persona-conditioned user agent.
Turn 1 is a greeting plus self-introduction and is never scored; every later
chatbot response is scored by the critic and regenerated with feedback until
all three dimensions reach the acceptance threshold or the regeneration
budget is spent.  The first attempt and its scores are cached alongside the
final ones.

The chatbot's own conversation keeps its rejected attempts and the feedback
messages (it must see what to improve); the stored dialogue and the user
agent only ever see the final utterance of each turn.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import ChatloopError, EndpointUnreachable, MalformedResponse, UnparseableCritique
from .gateway import ChatMessage, CompletionParams, EndpointRef, Gateway
from .models import (
    UNCLASSIFIED,
    CorpusIteration,
    CritiqueRecord,
    Dialogue,
    DialogueTurn,
    GenerationConfig,
    ScoreTriple,
    UserBackground,
    validate,
    write_jsonl,
)
from .prompts import parse_critic_output, render_chatbot_system, render_critic, render_regeneration, render_user_agent_system

logger = logging.getLogger(__name__)

GREETING_KICKOFF = "You are starting the conversation now. Greet the user and invite them to introduce themselves."


@dataclass(frozen=True)
class TurnOutcome:
    turn: DialogueTurn | None
    aborted: bool = False
    abort_reason: str | None = None


@dataclass(frozen=True)
class RegenResult:
    final_text: str
    first_text: str
    first_scores: ScoreTriple
    final_scores: ScoreTriple
    regen_count: int
    critiques: tuple[CritiqueRecord, ...]


def score_response(
    gateway: Gateway,
    critic: EndpointRef,
    background: UserBackground,
    history: tuple[DialogueTurn, ...],
    response: str,
    config: GenerationConfig,
) -> CritiqueRecord:
    """One critic scoring call, re-querying on unparseable output.

    Scores are never fabricated: after `critic_parse_retries` re-queries the
    last UnparseableCritique propagates and the caller aborts the turn.
    """
    messages = render_critic(background, history, response)
    params = CompletionParams(temperature=config.critic_temperature, max_tokens=config.max_tokens)
    last_error: UnparseableCritique | None = None
    for _ in range(config.critic_parse_retries + 1):
        result = gateway.complete_chat(critic, messages, params)
        try:
            return parse_critic_output(result.text)
        except UnparseableCritique as exc:
            last_error = exc
    assert last_error is not None
    raise last_error


def regenerate_until_pass(
    gateway: Gateway,
    chatbot: EndpointRef,
    chatbot_messages: list[ChatMessage],
    critic: EndpointRef,
    background: UserBackground,
    history: tuple[DialogueTurn, ...],
    config: GenerationConfig,
) -> RegenResult:
    """Obtain a response and regenerate with critic feedback until it passes.

    `chatbot_messages` must end awaiting a chatbot response.  On return it
    has been extended with every attempt and feedback message, ending with
    the final (last) attempt.  The final attempt is returned even when it is
    still below threshold after the regeneration budget is spent.
    """
    params = CompletionParams(temperature=config.chat_temperature, max_tokens=config.max_tokens, attempt=0)
    first_text = gateway.complete_chat(chatbot, chatbot_messages, params).text
    first_critique = score_response(gateway, critic, background, history, first_text, config)
    critiques = [first_critique]

    current_text = first_text
    current_scores = first_critique.scores
    regen_count = 0
    while current_scores.min() < config.accept_threshold and regen_count < config.max_regens:
        chatbot_messages.append(ChatMessage(role="assistant", content=current_text))
        chatbot_messages.append(render_regeneration(critiques[-1], config.accept_threshold))
        attempt_params = CompletionParams(
            temperature=config.chat_temperature, max_tokens=config.max_tokens, attempt=regen_count + 1
        )
        current_text = gateway.complete_chat(chatbot, chatbot_messages, attempt_params).text
        critique = score_response(gateway, critic, background, history, current_text, config)
        critiques.append(critique)
        current_scores = critique.scores
        regen_count += 1

    chatbot_messages.append(ChatMessage(role="assistant", content=current_text))
    return RegenResult(
        final_text=current_text,
        first_text=first_text,
        first_scores=first_critique.scores,
        final_scores=current_scores,
        regen_count=regen_count,
        critiques=tuple(critiques),
    )


def run_dialogue(
    gateway: Gateway,
    chatbot: EndpointRef,
    user: UserBackground,
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef | None,
    config: GenerationConfig,
    iteration: int = 1,
) -> Dialogue:
    """One full conversation; critic_endpoint None disables scoring entirely.

    A failed turn aborts the dialogue: completed turns are kept, the abort
    reason is recorded, and the dialogue is marked unclassified.
    """
    problems = validate(user)
    if problems:
        raise ValueError(f"user background {user.id} fails validation: {problems}")

    chat_params = CompletionParams(temperature=config.chat_temperature, max_tokens=config.max_tokens)
    chatbot_messages = [ChatMessage(role="system", content=render_chatbot_system())]
    user_messages = [ChatMessage(role="system", content=render_user_agent_system(user))]
    turns: list[DialogueTurn] = []

    def aborted(reason: str) -> Dialogue:
        logger.warning("dialogue with %s aborted: %s", user.id, reason)
        return Dialogue(
            user_id=user.id,
            iteration=iteration,
            turns=tuple(turns),
            difficulty=UNCLASSIFIED,
            abort_reason=reason,
        )

    # turn 1: chatbot greets, user agent gives a brief self-introduction, unscored
    try:
        chatbot_messages.append(ChatMessage(role="user", content=GREETING_KICKOFF))
        greeting = gateway.complete_chat(chatbot, chatbot_messages, chat_params).text
        chatbot_messages.append(ChatMessage(role="assistant", content=greeting))
        user_messages.append(ChatMessage(role="user", content=greeting))
        intro = gateway.complete_chat(user_endpoint, user_messages, chat_params).text
        user_messages.append(ChatMessage(role="assistant", content=intro))
        chatbot_messages.append(ChatMessage(role="user", content=intro))
    except (EndpointUnreachable, MalformedResponse, UnparseableCritique) as exc:
        return aborted(f"turn 1: {exc}")
    turns.append(DialogueTurn(turn_index=1, bot_first_attempt=greeting, bot_final=greeting, user_reply=intro))

    for t in range(2, config.turns + 1):
        history = tuple(turns)
        try:
            if critic_endpoint is not None:
                regen = regenerate_until_pass(
                    gateway, chatbot, chatbot_messages, critic_endpoint, user, history, config
                )
                final_text = regen.final_text
            else:
                final_text = gateway.complete_chat(chatbot, chatbot_messages, chat_params).text
                chatbot_messages.append(ChatMessage(role="assistant", content=final_text))
                regen = None
            # the user agent replies to the final accepted utterance only
            user_messages.append(ChatMessage(role="user", content=final_text))
            user_reply = gateway.complete_chat(user_endpoint, user_messages, chat_params).text
            user_messages.append(ChatMessage(role="assistant", content=user_reply))
            chatbot_messages.append(ChatMessage(role="user", content=user_reply))
        except (EndpointUnreachable, MalformedResponse, UnparseableCritique) as exc:
            return aborted(f"turn {t}: {exc}")
        if regen is not None:
            turns.append(
                DialogueTurn(
                    turn_index=t,
                    bot_first_attempt=regen.first_text,
                    bot_final=regen.final_text,
                    user_reply=user_reply,
                    first_scores=regen.first_scores,
                    final_scores=regen.final_scores,
                    regen_count=regen.regen_count,
                    critiques=regen.critiques,
                )
            )
        else:
            turns.append(
                DialogueTurn(turn_index=t, bot_first_attempt=final_text, bot_final=final_text, user_reply=user_reply)
            )

    return Dialogue(user_id=user.id, iteration=iteration, turns=tuple(turns))


def generate_corpus(
    gateway: Gateway,
    chatbot: EndpointRef,
    users: list[UserBackground],
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef | None,
    config: GenerationConfig,
    iteration: int = 1,
) -> CorpusIteration:
    """Run one dialogue per user, up to concurrency_limit in parallel.

    Output order is by user index regardless of completion order.  A failing
    dialogue never fails the batch; it is recorded as aborted/unclassified.
    """
    if not users:
        raise ValueError("users must be non-empty")
    ids = [u.id for u in users]
    if len(set(ids)) != len(ids):
        raise ValueError("user ids must be distinct within one iteration")

    def one(user: UserBackground) -> Dialogue:
        try:
            return run_dialogue(gateway, chatbot, user, user_endpoint, critic_endpoint, config, iteration)
        except ChatloopError as exc:
            return Dialogue(
                user_id=user.id,
                iteration=iteration,
                turns=(),
                difficulty=UNCLASSIFIED,
                abort_reason=f"dialogue failed: {exc}",
            )

    with ThreadPoolExecutor(max_workers=config.concurrency_limit) as pool:
        dialogues = tuple(pool.map(one, users))
    return CorpusIteration(iteration=iteration, dialogues=dialogues, config_snapshot=config)


def flat_score_records(corpus: CorpusIteration) -> list[dict]:
    """Per-turn score rows for analysis tools."""
    rows = []
    for d in corpus.dialogues:
        for t in d.scored_turns():
            if t.final_scores is None:
                continue
            rows.append(
                {
                    "user_id": d.user_id,
                    "iteration": d.iteration,
                    "turn_index": t.turn_index,
                    "first_scores": t.first_scores.to_dict() if t.first_scores else None,
                    "final_scores": t.final_scores.to_dict(),
                    "regen_count": t.regen_count,
                }
            )
    return rows


def write_scores(path: str | Path, corpus: CorpusIteration) -> int:
    return write_jsonl(path, flat_score_records(corpus), kind="scores")
