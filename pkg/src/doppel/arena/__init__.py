"""Blind evaluation arena: session orchestration, HTTP API, persistence."""

from .core import (
    DEADLINE_S,
    HUMAN_CONFIG,
    IDLE_YIELD_S,
    VERDICT_REASONS,
    Arena,
    ArenaError,
    AlreadyRevealed,
    ConfederateDisconnected,
    InvalidRating,
    NotAwaitingVerdict,
    NotYourTurn,
    ParticipantProfile,
    PoolExhausted,
    PromptCard,
    ReplyContext,
    Session,
    SessionExpired,
    TrajectoryStore,
    UnknownParticipant,
    UnknownSession,
    Verdict,
    canonical_json,
    derive_seed,
    draw_prompt,
    load_prompt_pool,
    next_config,
)

__all__ = [
    "DEADLINE_S",
    "HUMAN_CONFIG",
    "IDLE_YIELD_S",
    "VERDICT_REASONS",
    "Arena",
    "ArenaError",
    "AlreadyRevealed",
    "ConfederateDisconnected",
    "InvalidRating",
    "NotAwaitingVerdict",
    "NotYourTurn",
    "ParticipantProfile",
    "PoolExhausted",
    "PromptCard",
    "ReplyContext",
    "Session",
    "SessionExpired",
    "TrajectoryStore",
    "UnknownParticipant",
    "UnknownSession",
    "Verdict",
    "canonical_json",
    "derive_seed",
    "draw_prompt",
    "load_prompt_pool",
    "next_config",
]
