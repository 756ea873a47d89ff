"""Session state machine for the blind evaluation arena.

Every operation takes an explicit `at` timestamp (seconds, server clock)
so the whole machine is a pure function of its inputs: the HTTP layer
passes wall time, tests pass scripted times, and replays are exact.

A session pairs one participant with either an AI roster config or a human
confederate behind the same interface. Messages flow for three minutes;
then the participant rates how human the partner felt, the verdict is
stored, and the true identity is revealed.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

from ..persona import ReplyPlan

DEADLINE_S = 180.0
IDLE_YIELD_S = 20.0
RATING_MIN = 1
RATING_MAX = 7
RATING_FORBIDDEN = 4
HUMAN_GUESS_MIN = 5  # rating at or above this means "I think it was a human"
VERDICT_REASONS = ("contextual-knowledge", "stylistic-conversation", "stylistic-flow")
CATEGORIES = ("stylistic", "contextual")
HUMAN_CONFIG = "human"


class ArenaError(Exception):
    pass


class UnknownParticipant(ArenaError):
    pass


class UnknownSession(ArenaError):
    pass


class SessionExpired(ArenaError):
    pass


class NotYourTurn(ArenaError):
    pass


class NotAwaitingVerdict(ArenaError):
    pass


class AlreadyRevealed(ArenaError):
    pass


class InvalidRating(ArenaError):
    pass


class PoolExhausted(ArenaError):
    pass


class ConfederateDisconnected(ArenaError):
    pass


# --- domain types ------------------------------------------------------------

@dataclass(frozen=True)
class PromptCard:
    id: str
    category: str
    topic: str
    prompt: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "topic": self.topic,
            "prompt": self.prompt,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PromptCard":
        return cls(
            id=raw["id"], category=raw["category"],
            topic=raw["topic"], prompt=raw["prompt"],
        )


def load_prompt_pool(path: str | None = None) -> list[PromptCard]:
    """Load prompt cards from a JSON file, or the packaged 120-card pool."""
    if path is None:
        raw = resources.files("doppel").joinpath("data/prompt_pool.json").read_text("utf-8")
        cards = [PromptCard.from_dict(c) for c in json.loads(raw)]
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cards = [PromptCard.from_dict(c) for c in json.load(fh)]
    if not cards:
        raise ValueError("prompt pool is empty")
    if len({c.id for c in cards}) != len(cards):
        raise ValueError("prompt pool has duplicate card ids")
    return cards


@dataclass(frozen=True)
class Verdict:
    rating: int
    reasons: tuple[str, ...] = ()
    free_text: str = ""

    def __post_init__(self):
        if not isinstance(self.rating, int) or not RATING_MIN <= self.rating <= RATING_MAX:
            raise InvalidRating(f"rating must be an integer in {RATING_MIN}..{RATING_MAX}")
        if self.rating == RATING_FORBIDDEN:
            raise InvalidRating(f"rating {RATING_FORBIDDEN} is not allowed; pick a side")
        for reason in self.reasons:
            if reason not in VERDICT_REASONS:
                raise InvalidRating(f"unknown reason {reason!r}")
        if len(set(self.reasons)) != len(self.reasons):
            raise InvalidRating("duplicate reasons")

    @property
    def guess(self) -> str:
        return "human" if self.rating >= HUMAN_GUESS_MIN else "AI"

    def to_dict(self) -> dict:
        return {
            "rating": self.rating,
            "guess": self.guess,
            "reasons": list(self.reasons),
            "free_text": self.free_text,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Verdict":
        return cls(
            rating=int(raw["rating"]),
            reasons=tuple(raw.get("reasons", [])),
            free_text=raw.get("free_text", ""),
        )


def _check_scale(name: str, value, required: bool):
    if value is None:
        if required:
            raise ValueError(f"{name} is required")
        return
    if not isinstance(value, int) or not 1 <= value <= 7:
        raise ValueError(f"{name} must be an integer in 1..7")


@dataclass(frozen=True)
class ParticipantProfile:
    """Intake questionnaire; initials, interviewer, and AI familiarity are mandatory."""

    initials: str
    interviewer: str
    ai_familiarity: int
    age: int | None = None
    closeness: int | None = None
    text_frequency: int | None = None
    played_before: bool = False

    def __post_init__(self):
        if not self.initials.strip():
            raise ValueError("initials are required")
        if not self.interviewer.strip():
            raise ValueError("interviewer name is required")
        _check_scale("ai_familiarity", self.ai_familiarity, required=True)
        _check_scale("closeness", self.closeness, required=False)
        _check_scale("text_frequency", self.text_frequency, required=False)
        if self.age is not None and (not isinstance(self.age, int) or self.age <= 0):
            raise ValueError("age must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "initials": self.initials,
            "interviewer": self.interviewer,
            "ai_familiarity": self.ai_familiarity,
            "age": self.age,
            "closeness": self.closeness,
            "text_frequency": self.text_frequency,
            "played_before": self.played_before,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ParticipantProfile":
        return cls(
            initials=raw["initials"],
            interviewer=raw["interviewer"],
            ai_familiarity=int(raw["ai_familiarity"]),
            age=raw.get("age"),
            closeness=raw.get("closeness"),
            text_frequency=raw.get("text_frequency"),
            played_before=bool(raw.get("played_before", False)),
        )


# --- balancing and prompt draws ----------------------------------------------

def next_config(rounds_played: int, offset: int, roster: Sequence[str]) -> str:
    """Cyclic Latin-square assignment: round r of offset-p gets roster[(r+p) mod n]."""
    if not roster:
        raise ValueError("roster is empty")
    return roster[(rounds_played + offset) % len(roster)]


def derive_seed(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def draw_prompt(
    pool: Sequence[PromptCard],
    drawn_ids: set[str],
    last_category: str | None,
    seed: int,
) -> PromptCard:
    """Seeded draw without replacement, alternating category while both last.

    The first draw samples the whole pool; later draws prefer the category
    opposite the previous card, falling back when that side is exhausted.
    """
    remaining = sorted((c for c in pool if c.id not in drawn_ids), key=lambda c: c.id)
    if not remaining:
        raise PoolExhausted("every prompt card has been used for this participant")
    if last_category is None:
        eligible = remaining
    else:
        target = "contextual" if last_category == "stylistic" else "stylistic"
        eligible = [c for c in remaining if c.category == target] or remaining
    return random.Random(seed).choice(eligible)


# --- sessions ----------------------------------------------------------------

@dataclass
class Participant:
    id: str
    profile: ParticipantProfile
    offset: int
    rounds: int = 0
    drawn_ids: set[str] = field(default_factory=set)
    last_category: str | None = None


@dataclass(frozen=True)
class ReplyContext:
    """Everything a reply backend needs to produce one AI turn."""

    session_id: str
    config_id: str
    card: PromptCard
    transcript: tuple[dict, ...]
    started_at: float
    seed: int
    participant_initials: str


ReplyFn = Callable[[ReplyContext], ReplyPlan]

LIVE = "live"
AWAITING_VERDICT = "awaiting-verdict"
REVEALED = "revealed"
ABORTED = "aborted"

PARTICIPANT = "participant"
INTERLOCUTOR = "interlocutor"


@dataclass
class Session:
    id: str
    participant_id: str
    config_id: str
    kind: str  # "ai" | "human"
    card: PromptCard
    started_at: float
    deadline: float
    state: str = LIVE
    transcript: list[dict] = field(default_factory=list)
    verdict: Verdict | None = None
    excluded: bool = False
    turn: str = PARTICIPANT
    turn_counter: int = 0
    pending: list[tuple[float, str]] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)
    last_participant_msg_at: float | None = None
    msgs_this_turn: int = 0
    abort_reason: str | None = None

    def rel(self, at: float) -> float:
        return round(at - self.started_at, 3)

    def remaining(self, at: float) -> float:
        return round(max(0.0, self.deadline - at), 3)

    def to_record(self) -> dict:
        return {
            "session": self.id,
            "participant": self.participant_id,
            "interlocutor": self.config_id,
            "prompt": self.card.to_dict(),
            "transcript": self.transcript,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "excluded": self.excluded,
            "dropped": self.dropped,
            "state": self.state,
        }


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class TrajectoryStore:
    """Append-only JSONL persistence for participants and finished sessions."""

    def __init__(self, directory: str):
        self.dir = directory
        os.makedirs(directory, exist_ok=True)

    def _append(self, name: str, record: dict) -> None:
        with open(os.path.join(self.dir, name), "a", encoding="utf-8") as fh:
            fh.write(canonical_json(record) + "\n")

    def append_participant(self, record: dict) -> None:
        self._append("participants.jsonl", record)

    def append_trajectory(self, record: dict) -> None:
        self._append("trajectories.jsonl", record)

    @staticmethod
    def _read(path: str) -> list[dict]:
        if not os.path.exists(path):
            return []
        out = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def load_participants(self) -> list[dict]:
        return self._read(os.path.join(self.dir, "participants.jsonl"))

    def load_trajectories(self) -> list[dict]:
        return self._read(os.path.join(self.dir, "trajectories.jsonl"))


class Arena:
    """All live state: participants, sessions, balancing, persistence."""

    def __init__(
        self,
        roster: Sequence[str],
        pool: Sequence[PromptCard],
        reply_fn: ReplyFn | None = None,
        *,
        seed: int = 0,
        deadline_s: float = DEADLINE_S,
        idle_yield_s: float = IDLE_YIELD_S,
        store: TrajectoryStore | None = None,
    ):
        if not roster:
            raise ValueError("roster is empty")
        if len(set(roster)) != len(roster):
            raise ValueError("roster has duplicate config ids")
        self.roster = list(roster)
        self.pool = list(pool)
        self.reply_fn = reply_fn
        self.seed = seed
        self.deadline_s = deadline_s
        self.idle_yield_s = idle_yield_s
        self.store = store
        self.participants: dict[str, Participant] = {}
        self.sessions: dict[str, Session] = {}

    # -- enrollment and pairing --

    def enroll(self, profile: ParticipantProfile) -> str:
        pid = f"p-{len(self.participants):04d}"
        participant = Participant(
            id=pid, profile=profile, offset=len(self.participants) % len(self.roster)
        )
        self.participants[pid] = participant
        if self.store:
            self.store.append_participant({"participant": pid, **profile.to_dict()})
        return pid

    def _participant(self, pid: str) -> Participant:
        if pid not in self.participants:
            raise UnknownParticipant(pid)
        return self.participants[pid]

    def _session(self, sid: str) -> Session:
        if sid not in self.sessions:
            raise UnknownSession(sid)
        return self.sessions[sid]

    def create_session(self, participant_id: str, at: float) -> Session:
        participant = self._participant(participant_id)
        config_id = next_config(participant.rounds, participant.offset, self.roster)
        draw_seed = derive_seed(self.seed, participant.id, "draw", len(participant.drawn_ids))
        card = draw_prompt(self.pool, participant.drawn_ids, participant.last_category, draw_seed)
        participant.drawn_ids.add(card.id)
        participant.last_category = card.category
        participant.rounds += 1

        session = Session(
            id=f"s-{len(self.sessions):06d}",
            participant_id=participant_id,
            config_id=config_id,
            kind="human" if config_id == HUMAN_CONFIG else "ai",
            card=card,
            started_at=at,
            deadline=at + self.deadline_s,
        )
        self.sessions[session.id] = session
        return session

    # -- time advancement --

    def _deliver_due(self, session: Session, at: float) -> None:
        while session.pending and session.pending[0][0] <= at:
            sched, text = session.pending.pop(0)
            session.transcript.append(
                {"sender": INTERLOCUTOR, "text": text, "t": session.rel(sched)}
            )
        if session.turn == INTERLOCUTOR and not session.pending:
            session.turn = PARTICIPANT
            session.msgs_this_turn = 0
            session.last_participant_msg_at = None

    def advance(self, session: Session, at: float) -> None:
        """Bring the session's lazy state up to `at`.

        Delivers due AI messages, applies the idle yield, and performs the
        deadline transition. Deterministic: the resulting state depends
        only on the timeline, not on when observations happen to occur.
        """
        if session.state != LIVE:
            return
        self._deliver_due(session, at)
        if (
            session.kind == "ai"
            and session.turn == PARTICIPANT
            and session.msgs_this_turn >= 1
            and session.last_participant_msg_at is not None
        ):
            yield_time = session.last_participant_msg_at + self.idle_yield_s
            if yield_time <= at and yield_time <= session.deadline:
                self._yield_turn(session, yield_time)
                self._deliver_due(session, at)
        if at > session.deadline:
            self._deliver_due(session, session.deadline)
            session.pending.clear()
            session.state = AWAITING_VERDICT

    def _yield_turn(self, session: Session, at: float) -> None:
        if self.reply_fn is None:
            return
        ctx = ReplyContext(
            session_id=session.id,
            config_id=session.config_id,
            card=session.card,
            transcript=tuple(dict(m) for m in session.transcript),
            started_at=session.started_at,
            seed=derive_seed(self.seed, session.id, "turn", session.turn_counter),
            participant_initials=self.participants[session.participant_id].profile.initials,
        )
        session.turn = INTERLOCUTOR
        session.turn_counter += 1
        session.msgs_this_turn = 0
        session.last_participant_msg_at = None
        try:
            plan = self.reply_fn(ctx)
        except Exception as exc:
            self._abort(session, f"reply-backend: {exc}")
            return
        cursor = at
        for text, delay in zip(plan.messages, plan.delays):
            cursor += delay
            if cursor > session.deadline:
                session.dropped.append({"text": text, "t": session.rel(cursor)})
            else:
                session.pending.append((cursor, text))

    def _abort(self, session: Session, reason: str) -> None:
        session.state = ABORTED
        session.excluded = True
        session.abort_reason = reason
        session.pending.clear()
        self._persist(session)

    def _persist(self, session: Session) -> None:
        if self.store:
            self.store.append_trajectory(session.to_record())

    # -- message flow --

    def post_message(self, session_id: str, sender: str, text: str, at: float) -> dict:
        session = self._session(session_id)
        self.advance(session, at)
        if session.state == ABORTED:
            raise ConfederateDisconnected(session.abort_reason or "session aborted")
        if session.state != LIVE or at > session.deadline:
            raise SessionExpired(f"session {session_id} is past its deadline")
        if sender not in (PARTICIPANT, INTERLOCUTOR):
            raise ValueError(f"unknown sender {sender!r}")
        if session.kind == "ai":
            if sender == INTERLOCUTOR:
                raise NotYourTurn("the interlocutor in this session is not a relay party")
            if session.turn != PARTICIPANT:
                raise NotYourTurn("waiting for the other side to finish their turn")
        entry = {"sender": sender, "text": text, "t": session.rel(at)}
        session.transcript.append(entry)
        if sender == PARTICIPANT:
            session.msgs_this_turn += 1
            session.last_participant_msg_at = at
        return entry

    def end_turn(self, session_id: str, at: float) -> None:
        session = self._session(session_id)
        self.advance(session, at)
        if session.state != LIVE:
            raise SessionExpired(f"session {session_id} is no longer live")
        if session.kind != "ai":
            return
        if session.turn == PARTICIPANT:
            self._yield_turn(session, at)
            self._deliver_due(session, at)

    def events(self, session_id: str, since: int, at: float) -> dict:
        session = self._session(session_id)
        self.advance(session, at)
        since = max(0, since)
        new = [
            {"i": since + j, **entry}
            for j, entry in enumerate(session.transcript[since:])
        ]
        return {
            "events": new,
            "cursor": len(session.transcript),
            "remaining": session.remaining(at),
            "state": session.state,
        }

    # -- verdict and reveal --

    def submit_verdict(
        self, session_id: str, rating: int, reasons: Sequence[str], free_text: str, at: float
    ) -> dict:
        session = self._session(session_id)
        self.advance(session, at)
        if session.state == REVEALED:
            raise AlreadyRevealed(session_id)
        if session.state != AWAITING_VERDICT:
            raise NotAwaitingVerdict(f"session state is {session.state}")
        session.verdict = Verdict(rating=rating, reasons=tuple(reasons), free_text=free_text)
        session.state = REVEALED
        self._persist(session)
        return {"kind": session.kind, "config": session.config_id}

    def disconnect(self, session_id: str, at: float) -> None:
        """Confederate dropped mid-session: abort and exclude from analysis."""
        session = self._session(session_id)
        self.advance(session, at)
        if session.state == LIVE:
            self._abort(session, "confederate disconnected")
