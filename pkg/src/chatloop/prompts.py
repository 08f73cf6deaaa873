"""Prompt assembly for all four agents, and critic-output parsing.

Templates live as plain text files (package `templates/` directory by
default) and are loaded by id on every render, so edits take effect without
restarting.  Set CHATLOOP_PROMPTS_DIR (or pass `prompts_dir=`) to override
individual templates with your own files of the same name.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import UnparseableCritique
from .gateway import ChatMessage
from .models import DIMENSIONS, SCORE_MAX, SCORE_MIN, CritiqueRecord, DialogueTurn, ScoreTriple, UserBackground

PACKAGE_TEMPLATE_DIR = Path(__file__).parent / "templates"

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_placeholders: tuple[str, ...] = ()

    def render(self, **bindings: str) -> str:
        missing = [p for p in self.required_placeholders if p not in bindings]
        if missing:
            raise ValueError(f"template {self.id!r}: unbound required placeholders {missing}")
        unbound = sorted(set(_PLACEHOLDER.findall(self.body)) - set(bindings))
        if unbound:
            raise ValueError(f"template {self.id!r}: unbound placeholders {unbound}")
        # single pass over the original body; substituted values are never rescanned
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), self.body)


_REQUIRED = {
    "chatbot_system": (),
    "user_agent_system": ("name", "occupation_group", "career", "education", "personality", "hobbies"),
    "critic_system": (),
    "critic_user": ("background", "history", "response"),
    "regeneration": ("feedback",),
    "persona_generation": ("count", "occupation_group"),
}


def load_template(template_id: str, prompts_dir: str | Path | None = None) -> PromptTemplate:
    """Load a template by id, preferring an override directory when set."""
    search: list[Path] = []
    override = prompts_dir or os.environ.get("CHATLOOP_PROMPTS_DIR")
    if override:
        search.append(Path(override))
    search.append(PACKAGE_TEMPLATE_DIR)
    for directory in search:
        candidate = directory / f"{template_id}.txt"
        if candidate.is_file():
            body = candidate.read_text(encoding="utf-8")
            return PromptTemplate(
                id=template_id,
                body=body,
                required_placeholders=_REQUIRED.get(template_id, ()),
            )
    raise FileNotFoundError(f"no template file for id {template_id!r} in {[str(s) for s in search]}")


def render_chatbot_system(prompts_dir: str | Path | None = None) -> str:
    """System prompt for the chatbot: no prior user knowledge, explore proactively, greet first."""
    return load_template("chatbot_system", prompts_dir).render()


def render_user_agent_system(background: UserBackground, prompts_dir: str | Path | None = None) -> str:
    """System prompt for a user agent role-playing the given persona."""
    return load_template("user_agent_system", prompts_dir).render(
        name=background.name,
        occupation_group=background.occupation_group,
        career=background.career,
        education=background.education,
        personality=background.personality,
        hobbies=background.hobbies,
    )


def _format_history(history: Sequence[DialogueTurn]) -> str:
    if not history:
        return "(no prior exchanges)"
    lines = []
    for turn in history:
        lines.append(f"Chatbot: {turn.bot_final}")
        lines.append(f"User: {turn.user_reply}")
    return "\n".join(lines)


def _format_background(background: UserBackground) -> str:
    return (
        f"Name: {background.name}\n"
        f"Occupation group: {background.occupation_group}\n"
        f"Career: {background.career}\n"
        f"Education: {background.education}\n"
        f"Personality: {background.personality}\n"
        f"Hobbies: {background.hobbies}"
    )


def render_critic(
    background: UserBackground,
    history: Sequence[DialogueTurn],
    response: str,
    prompts_dir: str | Path | None = None,
) -> list[ChatMessage]:
    """Critic request: background, history (final utterances only), response under evaluation.

    History is rendered from each turn's bot_final; rejected attempts are
    never shown to the critic.
    """
    if not response:
        raise ValueError("response under evaluation must be non-empty")
    system = load_template("critic_system", prompts_dir).render()
    user = load_template("critic_user", prompts_dir).render(
        background=_format_background(background),
        history=_format_history(history),
        response=response,
    )
    return [ChatMessage(role="system", content=system), ChatMessage(role="user", content=user)]


def render_regeneration(
    critique: CritiqueRecord,
    accept_threshold: int = 4,
    prompts_dir: str | Path | None = None,
) -> ChatMessage:
    """Feedback message quoting every below-threshold dimension with its reason."""
    low = [dim for dim in DIMENSIONS if getattr(critique.scores, dim) < accept_threshold]
    if not low:
        raise ValueError("regeneration requested but every dimension meets the threshold")
    lines = []
    for dim in low:
        score = getattr(critique.scores, dim)
        reason = critique.reasons.get(dim, "").strip()
        entry = f"- {dim.capitalize()} scored {score}/5"
        if reason:
            entry += f": {reason}"
        lines.append(entry)
    body = load_template("regeneration", prompts_dir).render(feedback="\n".join(lines))
    return ChatMessage(role="user", content=body)


# ---------------------------------------------------------------------------
# Critic output parsing
# ---------------------------------------------------------------------------

_SCORE_FIELD = re.compile(
    r"(?i)\b(interest|relevance|value)\b(?:\s*score)?\s*[:=\-]?\s*(\d+(?:\.\d+)?)"
)
_REASON_STRIP = re.compile(r"^[\s\-:;,.–—]+")


def canonical_critique_text(scores: ScoreTriple, reasons: dict[str, str] | None = None) -> str:
    """Render scores in the canonical three-line layout the critic is asked for."""
    reasons = reasons or {}
    lines = []
    for dim in DIMENSIONS:
        reason = reasons.get(dim, "")
        lines.append(f"{dim.capitalize()}: {getattr(scores, dim)} - {reason}".rstrip())
    return "\n".join(lines)


def parse_critic_output(raw: str) -> CritiqueRecord:
    """Extract the three scores and reasons from critic text.

    Tolerates label casing, ordering, and separator style.  Non-integer
    numerals are rounded half-up and the record is flagged.  Raises
    UnparseableCritique when fewer than three score fields are recoverable
    or any recovered score is outside 1-5 (scores are never fabricated or
    clamped).
    """
    scores: dict[str, int] = {}
    reasons: dict[str, str] = {}
    rounded = False
    for line in raw.splitlines():
        matches = list(_SCORE_FIELD.finditer(line))
        for i, m in enumerate(matches):
            dim = m.group(1).lower()
            if dim in scores:
                continue
            numeral = float(m.group(2))
            value = math.floor(numeral + 0.5)
            if value != numeral:
                rounded = True
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise UnparseableCritique(f"{dim} score {m.group(2)} outside [{SCORE_MIN}, {SCORE_MAX}]")
            scores[dim] = value
            end = matches[i + 1].start() if i + 1 < len(matches) else len(line)
            reasons[dim] = _REASON_STRIP.sub("", line[m.end():end]).strip()
    missing = [dim for dim in DIMENSIONS if dim not in scores]
    if missing:
        raise UnparseableCritique(f"missing score fields: {missing}; raw: {raw[:200]!r}")
    return CritiqueRecord(
        scores=ScoreTriple(interest=scores["interest"], relevance=scores["relevance"], value=scores["value"]),
        reasons={dim: reasons.get(dim, "") for dim in DIMENSIONS},
        raw_text=raw,
        rounded=rounded,
    )


def all_score_triples() -> Iterable[ScoreTriple]:
    """Every possible triple, for exhaustive round-trip checks (125 values)."""
    for i in range(SCORE_MIN, SCORE_MAX + 1):
        for r in range(SCORE_MIN, SCORE_MAX + 1):
            for v in range(SCORE_MIN, SCORE_MAX + 1):
                yield ScoreTriple(interest=i, relevance=r, value=v)
