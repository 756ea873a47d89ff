"""Shared builders for messages, conversations, and memory fixtures."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from doppel.gateway import hash_embedding
from doppel.ingest import Conversation, Message
from doppel.memory import MemoryNode, MemoryStore

BASE_TS = datetime(2024, 1, 1, 12, 0, 0, tzinfo=timezone.utc)


def ts(minutes: float = 0.0, *, hours: float = 0.0, days: float = 0.0) -> datetime:
    return BASE_TS + timedelta(minutes=minutes, hours=hours, days=days)


def msg(sender: str, when: datetime, text: str = "hello") -> Message:
    return Message(sender=sender, timestamp=when, text=text)


def conv(conv_id: str, owner: str, messages) -> Conversation:
    return Conversation(id=conv_id, owner=owner, messages=tuple(messages))


def chat_conv(conv_id: str = "conv-00000", owner: str = "Ana", n: int = 6) -> Conversation:
    """Alternating two-party conversation, one minute between messages."""
    senders = ["Ben", owner]
    messages = [
        msg(senders[i % 2], ts(minutes=i), f"line {i}") for i in range(n)
    ]
    return conv(conv_id, owner, messages)


def node(
    node_id: str,
    tier: int,
    when: datetime,
    text: str | None = None,
    *,
    end: datetime | None = None,
    children: tuple[str, ...] = (),
    sources: tuple[str, ...] = (),
    dim: int = 8,
) -> MemoryNode:
    text = text if text is not None else f"fact {node_id}"
    base = MemoryNode(
        id=node_id, tier=tier, text=text,
        date_start=when, date_end=end or when,
        children=children, sources=sources,
    )
    from dataclasses import replace
    return replace(base, embedding=tuple(hash_embedding(base.embed_text(), dim)))


@pytest.fixture
def small_store() -> MemoryStore:
    """10 tier-1 facts under 4 episodes under 2 abstractions, dim 8."""
    store = MemoryStore()
    t1 = [node(f"m1-{i:06d}", 1, ts(days=i), sources=("conv-00000",)) for i in range(10)]
    groups = [(0, 1, 2), (3, 4), (5, 6, 7), (8, 9)]
    t2 = []
    for gi, members in enumerate(groups):
        starts = [t1[i].date_start for i in members]
        ends = [t1[i].date_end for i in members]
        t2.append(node(
            f"m2-{gi:06d}", 2, min(starts), f"episode {gi}",
            end=max(ends), children=tuple(t1[i].id for i in members),
        ))
    t3 = []
    for gi, members in enumerate([(0, 1), (2, 3)]):
        starts = [t2[i].date_start for i in members]
        ends = [t2[i].date_end for i in members]
        t3.append(node(
            f"m3-{gi:06d}", 3, min(starts), f"pattern {gi}",
            end=max(ends), children=tuple(t2[i].id for i in members),
        ))
    for n_ in t1 + t2 + t3:
        store.add(n_)
    store.validate()
    return store
