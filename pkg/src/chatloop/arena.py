"""Blind A/B human-evaluation sessions with per-dimension preference voting.

Each session pairs two chatbot systems behind anonymous labels A and B; the
assignment is drawn once at session creation from a seeded RNG and never
exposed before the vote is persisted.  Votes are appended to a JSONL log
joined with the hidden assignment, so tallies are per-system rather than
per-label.
"""

from __future__ import annotations

import io
import json
import random
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import AlreadyVoted, EndpointUnreachable, MalformedResponse, NoExchanges, NoVotes, SessionNotFound
from .gateway import ChatMessage, CompletionParams, EndpointRef, Gateway
from .models import dump_json
from .prompts import render_chatbot_system

VOTE_DIMENSIONS = ("overall", "relevance", "interest", "value")
VOTE_CHOICES = ("A", "B", "tie")
BOT_LABELS = ("A", "B")


@dataclass
class ArenaSession:
    session_id: str
    assignment: dict[str, EndpointRef]  # label -> endpoint, hidden until voted
    histories: dict[str, list[ChatMessage]] = field(default_factory=dict)
    exchanges: int = 0
    voted: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(frozen=True)
class ExchangeResult:
    replies: dict[str, str | None]  # label -> reply text, None on failure
    errors: dict[str, str | None]  # label -> error code, retriable per bot


class ArenaService:
    """Session registry plus vote log for one deployed system pair."""

    def __init__(
        self,
        gateway: Gateway,
        system_1: EndpointRef,
        system_2: EndpointRef,
        votes_path: str | Path,
        seed: int = 0,
        temperature: float = 0.7,
        max_tokens: int = 512,
    ) -> None:
        self.gateway = gateway
        self.system_1 = system_1
        self.system_2 = system_2
        self.votes_path = Path(votes_path)
        self.params = CompletionParams(temperature=temperature, max_tokens=max_tokens)
        self._rng = random.Random(f"arena:{seed}")
        self._sessions: dict[str, ArenaSession] = {}
        self._registry_lock = threading.Lock()
        self._votes_lock = threading.Lock()
        self._system_prompt = render_chatbot_system()

    # -- sessions -----------------------------------------------------------

    def create_session(self) -> str:
        session_id = uuid.uuid4().hex[:12]
        with self._registry_lock:
            system_1_is_a = self._rng.random() < 0.5
            assignment = (
                {"A": self.system_1, "B": self.system_2}
                if system_1_is_a
                else {"A": self.system_2, "B": self.system_1}
            )
            session = ArenaSession(
                session_id=session_id,
                assignment=assignment,
                histories={label: [ChatMessage(role="system", content=self._system_prompt)] for label in BOT_LABELS},
            )
            self._sessions[session_id] = session
        return session_id

    def _session(self, session_id: str) -> ArenaSession:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return session

    def exchange(self, session_id: str, text: str, bots: Iterable[str] = BOT_LABELS) -> ExchangeResult:
        """Send one user message to the selected bots; per-bot failures are retriable.

        A failed bot's history is left without the message, so retrying with
        only that bot re-sends it there without duplicating it for the other.
        """
        if not text.strip():
            raise ValueError("message text must be non-empty")
        session = self._session(session_id)
        with session.lock:
            if session.voted:
                raise AlreadyVoted(f"session {session_id} is closed")
            replies: dict[str, str | None] = {label: None for label in BOT_LABELS}
            errors: dict[str, str | None] = {label: None for label in BOT_LABELS}
            any_success = False
            for label in bots:
                if label not in BOT_LABELS:
                    raise ValueError(f"unknown bot label {label!r}")
                history = session.histories[label]
                attempt = history + [ChatMessage(role="user", content=text)]
                try:
                    reply = self.gateway.complete_chat(session.assignment[label], attempt, self.params).text
                except (EndpointUnreachable, MalformedResponse):
                    errors[label] = "bot_unavailable"
                    continue
                history.append(ChatMessage(role="user", content=text))
                history.append(ChatMessage(role="assistant", content=reply))
                replies[label] = reply
                any_success = True
            if any_success:
                session.exchanges += 1
            return ExchangeResult(replies=replies, errors=errors)

    def submit_vote(
        self,
        session_id: str,
        votes: dict[str, str],
        participant_note: str | None = None,
    ) -> dict[str, str]:
        """Persist the ballot joined with the hidden assignment; then reveal it."""
        session = self._session(session_id)
        with session.lock:
            if session.voted:
                raise AlreadyVoted(f"session {session_id} already voted")
            if session.exchanges == 0:
                raise NoExchanges(f"session {session_id} has no exchanges")
            missing = [d for d in VOTE_DIMENSIONS if d not in votes]
            if missing:
                raise ValueError(f"missing vote dimensions: {missing}")
            bad = {d: v for d, v in votes.items() if d in VOTE_DIMENSIONS and v not in VOTE_CHOICES}
            if bad:
                raise ValueError(f"invalid vote choices: {bad}")
            assignment_ids = {label: ep.id for label, ep in session.assignment.items()}
            winners = {
                dim: ("tie" if votes[dim] == "tie" else assignment_ids[votes[dim]]) for dim in VOTE_DIMENSIONS
            }
            record = {
                "session_id": session_id,
                "assignment": assignment_ids,
                "votes": {d: votes[d] for d in VOTE_DIMENSIONS},
                "winners": winners,
                "participant_note": participant_note,
            }
            self._append_vote(record)
            session.voted = True
            return assignment_ids

    def _append_vote(self, record: dict[str, Any]) -> None:
        with self._votes_lock:
            self.votes_path.parent.mkdir(parents=True, exist_ok=True)
            with io.open(self.votes_path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(dump_json(record) + "\n")

    def tally(self) -> dict[str, Any]:
        return tally_preferences(self.votes_path, self.system_1.id, self.system_2.id)


def read_votes(store: str | Path | Iterable[dict[str, Any]]) -> list[dict[str, Any]]:
    if isinstance(store, (str, Path)):
        path = Path(store)
        if not path.is_file():
            return []
        with io.open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    return list(store)


def tally_preferences(
    store: str | Path | Iterable[dict[str, Any]],
    system_1_id: str | None = None,
    system_2_id: str | None = None,
) -> dict[str, Any]:
    """Per-dimension preference fractions over all closed sessions.

    Fractions per dimension sum to 1 across {system_1, system_2, tie}.  Also
    reports the counterbalancing fraction: how often system_1 was shown as A.
    """
    votes = read_votes(store)
    if not votes:
        raise NoVotes("vote store is empty")
    if system_1_id is None or system_2_id is None:
        first = votes[0]["assignment"]
        system_1_id, system_2_id = first["A"], first["B"]
    fractions: dict[str, dict[str, float]] = {}
    n = len(votes)
    for dim in VOTE_DIMENSIONS:
        counts = {system_1_id: 0, system_2_id: 0, "tie": 0}
        for record in votes:
            winner = record["winners"][dim]
            counts[winner] = counts.get(winner, 0) + 1
        fractions[dim] = {key: count / n for key, count in counts.items()}
    system_1_shown_as_a = sum(1 for record in votes if record["assignment"]["A"] == system_1_id)
    return {
        "n_votes": n,
        "dimensions": fractions,
        "counterbalance_system_1_as_a": system_1_shown_as_a / n,
        "system_1": system_1_id,
        "system_2": system_2_id,
    }
