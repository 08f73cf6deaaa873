"""HTTP API for the arena and for run-manifest inspection.

Error payloads carry machine-readable codes (session_not_found,
session_closed, no_exchanges, already_voted, no_votes, invalid_vote).
Admin endpoints (/arena/tally, /runs/{run_id}) honor a shared bearer token
when the service is configured with one; chat endpoints stay open for
participants.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .arena import ArenaService
from .errors import AlreadyVoted, NoExchanges, NoVotes, SessionNotFound
from .manifest import MANIFEST_NAME


class MessageIn(BaseModel):
    text: str
    bots: list[str] | None = None


class VoteIn(BaseModel):
    overall: str
    relevance: str
    interest: str
    value: str
    participant_note: str | None = None


def _error(status: int, code: str, detail: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": detail})


def create_app(
    arena: ArenaService,
    runs_root: str | Path | None = None,
    admin_token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="chatloop arena", version="0.1.0")

    def require_admin(authorization: str | None = Header(default=None)) -> None:
        if admin_token is None:
            return
        if authorization != f"Bearer {admin_token}":
            raise _error(401, "unauthorized", "admin token required")

    @app.post("/arena/sessions")
    def create_session() -> dict:
        return {"session_id": arena.create_session()}

    @app.post("/arena/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn) -> dict:
        try:
            result = arena.exchange(session_id, body.text, bots=body.bots or ["A", "B"])
        except SessionNotFound as exc:
            raise _error(404, "session_not_found", str(exc))
        except AlreadyVoted as exc:
            raise _error(409, "session_closed", str(exc))
        except ValueError as exc:
            raise _error(422, "invalid_message", str(exc))
        return {
            "reply_a": result.replies["A"],
            "reply_b": result.replies["B"],
            "error_a": result.errors["A"],
            "error_b": result.errors["B"],
        }

    @app.post("/arena/sessions/{session_id}/messages/stream")
    def post_message_stream(session_id: str, body: MessageIn) -> StreamingResponse:
        """Incremental delivery: newline-delimited JSON chunks per bot reply."""
        try:
            result = arena.exchange(session_id, body.text, bots=body.bots or ["A", "B"])
        except SessionNotFound as exc:
            raise _error(404, "session_not_found", str(exc))
        except AlreadyVoted as exc:
            raise _error(409, "session_closed", str(exc))
        except ValueError as exc:
            raise _error(422, "invalid_message", str(exc))

        def chunks():
            for label in ("A", "B"):
                reply = result.replies[label]
                if reply is None:
                    yield json.dumps({"bot": label, "error": result.errors[label]}) + "\n"
                    continue
                words = reply.split(" ")
                for i in range(0, len(words), 8):
                    delta = " ".join(words[i:i + 8])
                    if i + 8 < len(words):
                        delta += " "
                    yield json.dumps({"bot": label, "delta": delta}) + "\n"
            yield json.dumps({"done": True}) + "\n"

        return StreamingResponse(chunks(), media_type="application/x-ndjson")

    @app.post("/arena/sessions/{session_id}/vote")
    def post_vote(session_id: str, body: VoteIn) -> dict:
        votes = {"overall": body.overall, "relevance": body.relevance, "interest": body.interest, "value": body.value}
        try:
            assignment = arena.submit_vote(session_id, votes, body.participant_note)
        except SessionNotFound as exc:
            raise _error(404, "session_not_found", str(exc))
        except AlreadyVoted as exc:
            raise _error(409, "already_voted", str(exc))
        except NoExchanges as exc:
            raise _error(409, "no_exchanges", str(exc))
        except ValueError as exc:
            raise _error(422, "invalid_vote", str(exc))
        return {"recorded": True, "assignment": assignment}

    @app.get("/arena/tally")
    def get_tally(_: None = Depends(require_admin)) -> dict:
        try:
            return arena.tally()
        except NoVotes as exc:
            raise _error(404, "no_votes", str(exc))

    @app.get("/runs/{run_id}")
    def get_run(run_id: str, _: None = Depends(require_admin)) -> dict:
        if runs_root is None:
            raise _error(404, "runs_disabled", "service started without a runs root")
        path = Path(runs_root) / run_id / MANIFEST_NAME
        if not path.is_file():
            raise _error(404, "run_not_found", f"no manifest for run {run_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    return app
