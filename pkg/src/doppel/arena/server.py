"""HTTP face of the arena.

Participant endpoints never carry interlocutor identity until the verdict
response; the relay endpoints exist for the human confederate driving the
other side of a relay session. All state changes funnel through one lock,
matching the one-writer-per-session model.
"""

from __future__ import annotations

import threading
import time
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .core import (
    AlreadyRevealed,
    Arena,
    ArenaError,
    ConfederateDisconnected,
    InvalidRating,
    NotAwaitingVerdict,
    NotYourTurn,
    ParticipantProfile,
    PoolExhausted,
    SessionExpired,
    UnknownParticipant,
    UnknownSession,
)

POLL_STEP_S = 0.1
POLL_WAIT_CAP_S = 25.0

_STATUS = {
    UnknownParticipant: 404,
    UnknownSession: 404,
    SessionExpired: 410,
    NotYourTurn: 409,
    NotAwaitingVerdict: 409,
    AlreadyRevealed: 409,
    PoolExhausted: 409,
    ConfederateDisconnected: 409,
    InvalidRating: 422,
}


class ParticipantPayload(BaseModel):
    initials: str
    interviewer: str
    ai_familiarity: int
    age: int | None = None
    closeness: int | None = None
    text_frequency: int | None = None
    played_before: bool = False


class SessionPayload(BaseModel):
    participant_id: str


class MessagePayload(BaseModel):
    text: str = Field(min_length=1)


class VerdictPayload(BaseModel):
    rating: int
    reasons: list[str] = Field(default_factory=list)
    free_text: str = ""


def create_app(
    arena: Arena,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> FastAPI:
    app = FastAPI(title="doppel arena")
    lock = threading.Lock()

    @app.exception_handler(ArenaError)
    def arena_error(request: Request, exc: ArenaError):
        status = _STATUS.get(type(exc), 409)
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    def value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=422, content={"error": "ValueError", "detail": str(exc)}
        )

    @app.post("/participants")
    def enroll(payload: ParticipantPayload):
        profile = ParticipantProfile(
            initials=payload.initials,
            interviewer=payload.interviewer,
            ai_familiarity=payload.ai_familiarity,
            age=payload.age,
            closeness=payload.closeness,
            text_frequency=payload.text_frequency,
            played_before=payload.played_before,
        )
        with lock:
            pid = arena.enroll(profile)
        return {"participant_id": pid}

    @app.post("/sessions")
    def create_session(payload: SessionPayload):
        with lock:
            session = arena.create_session(payload.participant_id, at=clock())
        return {
            "session_id": session.id,
            "topic": session.card.topic,
            "prompt": session.card.prompt,
        }

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, payload: MessagePayload):
        with lock:
            entry = arena.post_message(session_id, "participant", payload.text, at=clock())
        return entry

    @app.post("/sessions/{session_id}/end-turn")
    def end_turn(session_id: str):
        with lock:
            arena.end_turn(session_id, at=clock())
        return {"ok": True}

    def _poll(session_id: str, since: int, wait: float) -> dict:
        deadline = clock() + min(max(wait, 0.0), POLL_WAIT_CAP_S)
        while True:
            with lock:
                out = arena.events(session_id, since, at=clock())
            if out["events"] or out["state"] != "live" or clock() >= deadline:
                return out
            sleep(POLL_STEP_S)

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, since: int = 0, wait: float = 0.0):
        return _poll(session_id, since, wait)

    @app.post("/sessions/{session_id}/verdict")
    def verdict(session_id: str, payload: VerdictPayload):
        with lock:
            reveal = arena.submit_verdict(
                session_id, payload.rating, payload.reasons, payload.free_text, at=clock()
            )
        return reveal

    # -- confederate relay (not participant-facing) --

    @app.get("/sessions/{session_id}/relay/events")
    def relay_events(session_id: str, since: int = 0, wait: float = 0.0):
        with lock:
            session = arena._session(session_id)
            if session.kind != "human":
                raise NotYourTurn("not a relay session")
            card = session.card
        out = _poll(session_id, since, wait)
        out["topic"] = card.topic
        out["prompt"] = card.prompt
        return out

    @app.post("/sessions/{session_id}/relay/messages")
    def relay_message(session_id: str, payload: MessagePayload):
        with lock:
            session = arena._session(session_id)
            if session.kind != "human":
                raise NotYourTurn("not a relay session")
            entry = arena.post_message(session_id, "interlocutor", payload.text, at=clock())
        return entry

    @app.post("/sessions/{session_id}/relay/disconnect")
    def relay_disconnect(session_id: str):
        with lock:
            session = arena._session(session_id)
            if session.kind != "human":
                raise NotYourTurn("not a relay session")
            arena.disconnect(session_id, at=clock())
        return {"ok": True}

    return app
