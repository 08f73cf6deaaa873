"""Domain types shared by every pipeline stage.

All types are immutable values after construction (frozen dataclasses) and are
safe to share between concurrent tasks.  `validate` reports invariant
violations as values instead of raising, so callers decide what is fatal.

Canonical persistence is JSON-lines: one record per line, field names exactly
as declared here, with a schema-version header object as the first line of
each file.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

SCHEMA_VERSION = "chatloop/v1"

SCORE_MIN = 1
SCORE_MAX = 5

WORD_COUNT_MIN = 50
WORD_COUNT_MAX = 100

EASY = "easy"
DIFFICULT = "difficult"
UNCLASSIFIED = "unclassified"
DIFFICULTY_FLAGS = (EASY, DIFFICULT, UNCLASSIFIED)

DIMENSIONS = ("interest", "relevance", "value")


@dataclass(frozen=True)
class ScoreTriple:
    """Critic scores for one chatbot response: interest, relevance, value, each 1-5."""

    interest: int
    relevance: int
    value: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.interest, self.relevance, self.value)

    def min(self) -> int:
        return min(self.as_tuple())

    def to_dict(self) -> dict[str, int]:
        return {"interest": self.interest, "relevance": self.relevance, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScoreTriple":
        return cls(interest=int(d["interest"]), relevance=int(d["relevance"]), value=int(d["value"]))


@dataclass(frozen=True)
class CritiqueRecord:
    """One critic scoring call: parsed scores, per-dimension reasons, verbatim output."""

    scores: ScoreTriple
    reasons: dict[str, str]
    raw_text: str
    rounded: bool = False  # true when a non-integer numeral was rounded half-up

    def to_dict(self) -> dict[str, Any]:
        return {
            "scores": self.scores.to_dict(),
            "reasons": dict(self.reasons),
            "raw_text": self.raw_text,
            "rounded": self.rounded,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CritiqueRecord":
        return cls(
            scores=ScoreTriple.from_dict(d["scores"]),
            reasons=dict(d.get("reasons", {})),
            raw_text=d.get("raw_text", ""),
            rounded=bool(d.get("rounded", False)),
        )


@dataclass(frozen=True)
class UserBackground:
    """One persona record driving a simulated user agent."""

    id: str
    occupation_group: str
    name: str
    career: str
    education: str
    personality: str
    hobbies: str
    word_count: int
    flagged: bool = False  # imported record outside the 50-100 word range

    def combined_text(self) -> str:
        return " ".join([self.name, self.career, self.education, self.personality, self.hobbies])

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "occupation_group": self.occupation_group,
            "name": self.name,
            "career": self.career,
            "education": self.education,
            "personality": self.personality,
            "hobbies": self.hobbies,
            "word_count": self.word_count,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UserBackground":
        return cls(
            id=str(d["id"]),
            occupation_group=str(d["occupation_group"]),
            name=str(d["name"]),
            career=str(d.get("career", "")),
            education=str(d.get("education", "")),
            personality=str(d.get("personality", "")),
            hobbies=str(d.get("hobbies", "")),
            word_count=int(d["word_count"]),
            flagged=bool(d.get("flagged", False)),
        )


def count_words(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class DialogueTurn:
    """Per-turn record: first attempt, final utterance, user reply, score pair.

    Turn 1 is the greeting plus self-introduction and is never scored.  For
    scored turns, `bot_first_attempt` and `first_scores` cache the initial
    response before any regeneration; `bot_final` and `final_scores` hold the
    last attempt, accepted or not.
    """

    turn_index: int
    bot_first_attempt: str
    bot_final: str
    user_reply: str
    first_scores: ScoreTriple | None = None
    final_scores: ScoreTriple | None = None
    regen_count: int = 0
    critiques: tuple[CritiqueRecord, ...] = ()

    @property
    def scored(self) -> bool:
        return self.turn_index >= 2

    def to_dict(self) -> dict[str, Any]:
        return {
            "turn_index": self.turn_index,
            "bot_first_attempt": self.bot_first_attempt,
            "bot_final": self.bot_final,
            "user_reply": self.user_reply,
            "first_scores": self.first_scores.to_dict() if self.first_scores else None,
            "final_scores": self.final_scores.to_dict() if self.final_scores else None,
            "regen_count": self.regen_count,
            "critiques": [c.to_dict() for c in self.critiques],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DialogueTurn":
        return cls(
            turn_index=int(d["turn_index"]),
            bot_first_attempt=str(d["bot_first_attempt"]),
            bot_final=str(d["bot_final"]),
            user_reply=str(d["user_reply"]),
            first_scores=ScoreTriple.from_dict(d["first_scores"]) if d.get("first_scores") else None,
            final_scores=ScoreTriple.from_dict(d["final_scores"]) if d.get("final_scores") else None,
            regen_count=int(d.get("regen_count", 0)),
            critiques=tuple(CritiqueRecord.from_dict(c) for c in d.get("critiques", [])),
        )


@dataclass(frozen=True)
class Dialogue:
    """One complete (or aborted) conversation with a single user agent."""

    user_id: str
    iteration: int
    turns: tuple[DialogueTurn, ...]
    difficulty: str | None = None
    abort_reason: str | None = None

    @property
    def aborted(self) -> bool:
        return self.abort_reason is not None

    def scored_turns(self) -> tuple[DialogueTurn, ...]:
        return tuple(t for t in self.turns if t.scored)

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "iteration": self.iteration,
            "turns": [t.to_dict() for t in self.turns],
            "difficulty": self.difficulty,
            "abort_reason": self.abort_reason,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Dialogue":
        return cls(
            user_id=str(d["user_id"]),
            iteration=int(d["iteration"]),
            turns=tuple(DialogueTurn.from_dict(t) for t in d["turns"]),
            difficulty=d.get("difficulty"),
            abort_reason=d.get("abort_reason"),
        )


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for one corpus-generation / curriculum run.

    turns, max_regens and max_iterations are the dialogue length, the
    regeneration budget per scored turn, and the curriculum iteration cap.
    A response is regenerated while any dimension scores below
    accept_threshold; a turn is difficult when any final score is below alpha
    or, after regeneration, fewer than beta dimensions improved.
    """

    turns: int = 5
    max_regens: int = 3
    max_iterations: int = 4
    alpha: int = 4
    beta: int = 1
    accept_threshold: int = 4
    concurrency_limit: int = 4
    max_retries: int = 3
    retry_backoff: float = 1.0
    request_timeout: float = 30.0
    seed: int = 0
    chat_temperature: float = 0.7
    critic_temperature: float = 0.0
    max_tokens: int = 512
    critic_parse_retries: int = 2
    convergence_epsilon: float = 0.01
    redialogue_difficult_only: bool = False

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GenerationConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class CorpusIteration:
    """All dialogues produced in one curriculum iteration."""

    iteration: int
    dialogues: tuple[Dialogue, ...]
    config_snapshot: GenerationConfig

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "dialogues": [d.to_dict() for d in self.dialogues],
            "config_snapshot": self.config_snapshot.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CorpusIteration":
        return cls(
            iteration=int(d["iteration"]),
            dialogues=tuple(Dialogue.from_dict(x) for x in d["dialogues"]),
            config_snapshot=GenerationConfig.from_dict(d["config_snapshot"]),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _validate_score_triple(s: ScoreTriple) -> list[str]:
    out = []
    for dim in DIMENSIONS:
        v = getattr(s, dim)
        if not isinstance(v, int) or isinstance(v, bool) or not (SCORE_MIN <= v <= SCORE_MAX):
            out.append(f"ScoreTriple.{dim}: {v!r} outside integer range [{SCORE_MIN}, {SCORE_MAX}]")
    return out


def _validate_critique(c: CritiqueRecord) -> list[str]:
    out = _validate_score_triple(c.scores)
    # lossless parse: re-parsing the stored raw text must yield identical scores
    from .prompts import parse_critic_output  # local import avoids a cycle

    try:
        reparsed = parse_critic_output(c.raw_text)
    except Exception:
        out.append("CritiqueRecord.raw_text: does not re-parse to any scores")
        return out
    if reparsed.scores != c.scores:
        out.append(
            "CritiqueRecord.raw_text: re-parse yields "
            f"{reparsed.scores.as_tuple()} instead of {c.scores.as_tuple()}"
        )
    return out


def _validate_background(b: UserBackground) -> list[str]:
    out = []
    if not b.occupation_group:
        out.append("UserBackground.occupation_group: must be non-empty")
    if not b.id:
        out.append("UserBackground.id: must be non-empty")
    if not (WORD_COUNT_MIN <= b.word_count <= WORD_COUNT_MAX) and not b.flagged:
        out.append(
            f"UserBackground.word_count: {b.word_count} outside "
            f"[{WORD_COUNT_MIN}, {WORD_COUNT_MAX}] and record not flagged"
        )
    return out


def _validate_turn(t: DialogueTurn, max_regens: int | None = None) -> list[str]:
    out = []
    if t.turn_index < 1:
        out.append(f"DialogueTurn.turn_index: {t.turn_index} must be >= 1")
    if t.turn_index == 1:
        if t.first_scores is not None or t.final_scores is not None:
            out.append("DialogueTurn: greeting turn (index 1) must be unscored")
        if t.regen_count != 0:
            out.append("DialogueTurn.regen_count: must be 0 on the greeting turn")
        if t.critiques:
            out.append("DialogueTurn.critiques: must be empty on the greeting turn")
        return out
    if t.first_scores is None or t.final_scores is None:
        out.append(f"DialogueTurn: scored turn {t.turn_index} missing first_scores or final_scores")
    else:
        out.extend(_validate_score_triple(t.first_scores))
        out.extend(_validate_score_triple(t.final_scores))
        if t.regen_count == 0:
            if t.bot_first_attempt != t.bot_final:
                out.append("DialogueTurn: regen_count 0 requires bot_first_attempt == bot_final")
            if t.first_scores != t.final_scores:
                out.append("DialogueTurn: regen_count 0 requires first_scores == final_scores")
    if t.regen_count < 0:
        out.append(f"DialogueTurn.regen_count: {t.regen_count} must be >= 0")
    if max_regens is not None and t.regen_count > max_regens:
        out.append(f"DialogueTurn.regen_count: {t.regen_count} exceeds configured maximum {max_regens}")
    if t.critiques and len(t.critiques) != t.regen_count + 1:
        out.append(
            f"DialogueTurn.critiques: length {len(t.critiques)} != regen_count + 1 ({t.regen_count + 1})"
        )
    return out


def _validate_dialogue(d: Dialogue, expected_turns: int | None = None) -> list[str]:
    out = []
    if d.difficulty is not None and d.difficulty not in DIFFICULTY_FLAGS:
        out.append(f"Dialogue.difficulty: {d.difficulty!r} not one of {DIFFICULTY_FLAGS}")
    for i, t in enumerate(d.turns, start=1):
        if t.turn_index != i:
            out.append(f"Dialogue.turns: index {t.turn_index} at position {i}; turns must be 1..T contiguous")
        out.extend(_validate_turn(t))
    if expected_turns is not None and not d.aborted and len(d.turns) != expected_turns:
        out.append(f"Dialogue.turns: length {len(d.turns)} != configured {expected_turns}")
    return out


def _validate_config(c: GenerationConfig) -> list[str]:
    out = []
    if c.turns < 2:
        out.append(f"GenerationConfig.turns: {c.turns} must be >= 2")
    if c.max_regens < 0:
        out.append(f"GenerationConfig.max_regens: {c.max_regens} must be >= 0")
    if c.max_iterations < 1:
        out.append(f"GenerationConfig.max_iterations: {c.max_iterations} must be >= 1")
    if not (SCORE_MIN <= c.alpha <= SCORE_MAX):
        out.append(f"GenerationConfig.alpha: {c.alpha} outside [{SCORE_MIN}, {SCORE_MAX}]")
    if not (0 <= c.beta <= 3):
        out.append(f"GenerationConfig.beta: {c.beta} outside [0, 3]")
    if not (SCORE_MIN <= c.accept_threshold <= SCORE_MAX):
        out.append(f"GenerationConfig.accept_threshold: {c.accept_threshold} outside [{SCORE_MIN}, {SCORE_MAX}]")
    if c.concurrency_limit < 1:
        out.append(f"GenerationConfig.concurrency_limit: {c.concurrency_limit} must be >= 1")
    return out


def _validate_corpus(c: CorpusIteration) -> list[str]:
    out = _validate_config(c.config_snapshot)
    seen: set[str] = set()
    for d in c.dialogues:
        if d.iteration != c.iteration:
            out.append(f"CorpusIteration: dialogue for {d.user_id} has iteration {d.iteration} != {c.iteration}")
        if d.user_id in seen:
            out.append(f"CorpusIteration: duplicate user_id {d.user_id} within one iteration")
        seen.add(d.user_id)
        out.extend(_validate_dialogue(d, expected_turns=c.config_snapshot.turns))
    return out


_VALIDATORS = {
    ScoreTriple: _validate_score_triple,
    CritiqueRecord: _validate_critique,
    UserBackground: _validate_background,
    DialogueTurn: _validate_turn,
    Dialogue: _validate_dialogue,
    GenerationConfig: _validate_config,
    CorpusIteration: _validate_corpus,
}


def validate(record: Any) -> list[str]:
    """Return all invariant violations for a structurally well-formed record.

    Empty list means every invariant holds.  Never raises on well-formed
    input; violations are values, not failures.
    """
    validator = _VALIDATORS.get(type(record))
    if validator is None:
        raise TypeError(f"no validator for {type(record).__name__}")
    return validator(record)


# ---------------------------------------------------------------------------
# JSON-lines persistence with schema header
# ---------------------------------------------------------------------------


def dump_json(obj: Any) -> str:
    """Canonical single-line JSON: sorted keys, no float noise, stable bytes."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]], kind: str) -> int:
    """Write records to a JSONL file with a schema header line; returns record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_json({"schema_version": SCHEMA_VERSION, "kind": kind}) + "\n")
        for rec in records:
            fh.write(dump_json(rec) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path, kind: str | None = None) -> Iterator[dict[str, Any]]:
    """Yield records from a JSONL file, checking the schema header when present."""
    path = Path(path)
    with io.open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            return
        head = json.loads(first)
        if "schema_version" in head:
            if head["schema_version"] != SCHEMA_VERSION:
                raise ValueError(f"{path}: schema {head['schema_version']!r}, expected {SCHEMA_VERSION!r}")
            if kind is not None and head.get("kind") != kind:
                raise ValueError(f"{path}: kind {head.get('kind')!r}, expected {kind!r}")
        else:
            yield head
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_corpus(path: str | Path, corpus: CorpusIteration) -> None:
    """Persist one iteration: header with config snapshot, then one Dialogue per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {
            "schema_version": SCHEMA_VERSION,
            "kind": "corpus",
            "iteration": corpus.iteration,
            "config_snapshot": corpus.config_snapshot.to_dict(),
        }
        fh.write(dump_json(header) + "\n")
        for d in corpus.dialogues:
            fh.write(dump_json(d.to_dict()) + "\n")


def read_corpus(path: str | Path) -> CorpusIteration:
    path = Path(path)
    with io.open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != SCHEMA_VERSION or header.get("kind") != "corpus":
            raise ValueError(f"{path}: not a {SCHEMA_VERSION} corpus file")
        dialogues = tuple(Dialogue.from_dict(json.loads(line)) for line in fh if line.strip())
    return CorpusIteration(
        iteration=int(header["iteration"]),
        dialogues=dialogues,
        config_snapshot=GenerationConfig.from_dict(header["config_snapshot"]),
    )


def mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        return math.nan
    return sum(vals) / len(vals)
