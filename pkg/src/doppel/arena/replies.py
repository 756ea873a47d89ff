"""Wires arena reply requests to persona generation.

A roster file declares the interlocutor configs: the pseudo-config for
human confederates plus one entry per AI variant (persona fields, gateway
endpoint, optional memory store). The backend keeps one retrieval cache
per session so manager-mode retrievals stay independent across sessions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone

from ..gateway import GeneratorGateway, build_gateway
from ..ingest import Message
from ..memory import MemoryStore
from ..persona import PersonaProfile, ReplyPlan, generate_reply
from ..retrieval import RetrievalCache, retrieve_bm, retrieve_mm
from .core import HUMAN_CONFIG, INTERLOCUTOR, ReplyContext


@dataclass(frozen=True)
class RosterEntry:
    id: str
    kind: str  # "ai" | "human"
    persona: PersonaProfile | None = None
    gateway: GeneratorGateway | None = None
    memory: MemoryStore | None = None


@dataclass(frozen=True)
class RosterFile:
    order: tuple[str, ...]
    entries: dict[str, RosterEntry]
    seed: int
    deadline_s: float
    idle_yield_s: float


def load_roster(path: str) -> RosterFile:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    order: list[str] = []
    entries: dict[str, RosterEntry] = {}
    for cfg in raw["configs"]:
        cid = cfg["id"]
        kind = cfg.get("kind", "human" if cid == HUMAN_CONFIG else "ai")
        if kind == "human":
            entry = RosterEntry(id=cid, kind="human")
        else:
            persona = PersonaProfile.from_dict(cfg["persona"])
            gateway = build_gateway(cfg["gateway"])
            memory = None
            if persona.memory_mode != "none":
                if "memory_store" not in cfg:
                    raise ValueError(
                        f"config {cid} uses memory_mode={persona.memory_mode} "
                        "but names no memory_store"
                    )
                memory = MemoryStore.load(cfg["memory_store"])
            entry = RosterEntry(id=cid, kind="ai", persona=persona, gateway=gateway, memory=memory)
        order.append(cid)
        entries[cid] = entry
    return RosterFile(
        order=tuple(order),
        entries=entries,
        seed=int(raw.get("seed", 0)),
        deadline_s=float(raw.get("deadline_s", 180.0)),
        idle_yield_s=float(raw.get("idle_yield_s", 20.0)),
    )


def transcript_to_messages(ctx: ReplyContext, persona_name: str) -> list[Message]:
    """Role-labeled transcript entries as dated messages for the prompt."""
    out = []
    for entry in ctx.transcript:
        sender = persona_name if entry["sender"] == INTERLOCUTOR else ctx.participant_initials
        ts = datetime.fromtimestamp(ctx.started_at + entry["t"], tz=timezone.utc)
        out.append(Message(sender=sender, timestamp=ts, text=entry["text"]))
    return out


class PersonaReplyBackend:
    """ReplyFn over a loaded roster; per-session retrieval caches."""

    def __init__(self, entries: dict[str, RosterEntry]):
        self.entries = entries
        self._caches: dict[str, RetrievalCache] = {}

    def __call__(self, ctx: ReplyContext) -> ReplyPlan:
        entry = self.entries[ctx.config_id]
        if entry.kind != "ai" or entry.persona is None or entry.gateway is None:
            raise ValueError(f"config {ctx.config_id} cannot generate replies")
        persona = entry.persona
        history = transcript_to_messages(ctx, persona.name)

        retrieval_fn = None
        if persona.memory_mode == "BM":
            retrieval_fn = lambda h: retrieve_bm(h, entry.memory, entry.gateway)
        elif persona.memory_mode == "MM":
            cache = self._caches.setdefault(ctx.session_id, RetrievalCache())
            retrieval_fn = lambda h: retrieve_mm(h, entry.memory, entry.gateway, cache)

        today = datetime.fromtimestamp(ctx.started_at, tz=timezone.utc).date()
        return generate_reply(
            persona,
            ctx.card.prompt,
            history,
            retrieval_fn,
            entry.gateway,
            today=today,
            seed=ctx.seed,
        )
