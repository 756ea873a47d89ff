"""Inference-time memory retrieval: the manager agent (MM) and the dense baseline (BM).

BM embeds the tail of the conversation and takes the top tier-1 memories by
cosine similarity. MM is an agent loop over the hierarchy: check whether a
cached retrieval still suffices, pick relevant tier-3 abstractions, zoom
into their descendants, optionally top up with a same-tier embedding
search, then summarize, retrying the selection when the summarizer reports
the material insufficient.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Sequence

from .gateway import GeneratorGateway
from .ingest import Message, render_message_line
from .memory import MemoryNode, MemoryStore, numbered_memories, search_tier

MEMORY_LIMIT = 7
QUERY_WINDOW = 4
MAX_LOOPS = 3
CACHE_BOUND = 4


class MalformedSelection(Exception):
    """The abstraction-selection reply named no valid memory index."""


@dataclass
class RetrievalResult:
    memories: list[MemoryNode]
    summary: str | None
    served_from_cache: bool
    trace: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "memories": [
                {"id": n.id, "tier": n.tier, "text": n.text, "date": n.date_label()}
                for n in self.memories
            ],
            "summary": self.summary,
            "served_from_cache": self.served_from_cache,
            "trace": self.trace,
        }


@dataclass(frozen=True)
class CacheEntry:
    key: str
    result: RetrievalResult
    turn: int


class RetrievalCache:
    """Bounded FIFO of recent retrievals, newest consulted first.

    The key records what conversation window produced an entry; whether an
    entry still applies is decided by the sufficiency prompt, not by key
    equality.
    """

    def __init__(self, bound: int = CACHE_BOUND):
        if bound < 1:
            raise ValueError("cache bound must be >= 1")
        self.bound = bound
        self.entries: list[CacheEntry] = []
        self.turns = 0

    def __len__(self) -> int:
        return len(self.entries)


def cache_update(cache: RetrievalCache, key: str, result: RetrievalResult) -> None:
    cache.turns += 1
    cache.entries.append(CacheEntry(key=key, result=result, turn=cache.turns))
    while len(cache.entries) > cache.bound:
        cache.entries.pop(0)


def cache_lookup(cache: RetrievalCache, key: str = "") -> CacheEntry | None:
    if not cache.entries:
        return None
    return cache.entries[-1]


# --- prompt templates --------------------------------------------------------

SUFFICIENCY_PROMPT = """\
Given the following conversation:

{conversation}

And these previously retrieved memories:

{memories}

Are these memories sufficient to address the current conversation?
Answer with only 'Yes' or 'No'."""

SELECTION_PROMPT = """\
Given the following conversation:

{conversation}

And these top-level memory abstractions:

{abstractions}

Which of these memory abstractions are most relevant to the conversation?
Identify the numbers of the abstractions that should be expanded to retrieve more detailed memories.
Explain your reasoning briefly for each selection."""

SUMMARY_PROMPT = """\
Given the following conversation:

{conversation}

And these zoomed retrieved memories:

{memories}

Create a concise summary of the information from these memories that is most relevant to the conversation.
Focus on providing helpful context that would assist in continuing this conversation effectively.
Include specific details like dates, names, and facts when they are important.
If the memories are not enough to sufficiently answer the prompt, simply output "NO"."""


def render_history(history: Sequence[Message]) -> str:
    return "\n".join(render_message_line(m.sender, m.timestamp, m.text) for m in history)


def history_window_text(history: Sequence[Message], window: int = QUERY_WINDOW) -> str:
    return render_history(list(history)[-window:])


def memory_lines(nodes: Sequence[MemoryNode]) -> str:
    return "\n".join(f"[{n.date_label()}] {n.text}" for n in nodes)


def parse_selection(reply: str, count: int) -> list[int]:
    """Indices named in a selection reply, 1-based, deduped, order kept.

    Anything that is not a known index is ignored; an answer naming no
    valid index at all is malformed.
    """
    indices: list[int] = []
    for tok in re.findall(r"\d+", reply):
        idx = int(tok)
        if 1 <= idx <= count and idx not in indices:
            indices.append(idx)
    if not indices:
        raise MalformedSelection(f"no valid index in reply: {reply[:80]!r}")
    return indices


def dump_trace(trace: list[dict]) -> str:
    return "\n".join(json.dumps(rec, ensure_ascii=False) for rec in trace)


def _record(step: str, prompt_id: str | None, decision: str, nodes: Sequence[MemoryNode] = ()) -> dict:
    return {
        "step": step,
        "prompt_id": prompt_id,
        "decision": decision,
        "node_ids": [n.id for n in nodes],
    }


# --- baseline route ----------------------------------------------------------

def retrieve_bm(
    history: Sequence[Message],
    store: MemoryStore,
    gw: GeneratorGateway,
    k: int = MEMORY_LIMIT,
    window: int = QUERY_WINDOW,
) -> RetrievalResult:
    """Top-k tier-1 memories by cosine against the last-`window` messages."""
    query_text = history_window_text(history, window)
    vector = gw.embed(query_text)
    hits = search_tier(store, 1, vector, k)
    memories = [node for node, _ in hits]
    trace = [
        _record("embed", None, f"window={window}"),
        _record("rank", None, f"tier=1 k={k}", memories),
    ]
    return RetrievalResult(memories=memories, summary=None, served_from_cache=False, trace=trace)


# --- manager route -----------------------------------------------------------

def _chronological(nodes: Sequence[MemoryNode]) -> list[MemoryNode]:
    return sorted(nodes, key=lambda n: (n.date_start, n.id))


def _zoom(store: MemoryStore, selected: Sequence[MemoryNode]) -> tuple[list[MemoryNode], list[MemoryNode]]:
    tier2: list[MemoryNode] = []
    seen: set[str] = set()
    for abstraction in selected:
        for cid in abstraction.children:
            if cid not in seen:
                seen.add(cid)
                tier2.append(store.nodes[cid])
    tier2 = _chronological(tier2)
    tier1: list[MemoryNode] = []
    seen.clear()
    for episode in tier2:
        for cid in episode.children:
            if cid not in seen:
                seen.add(cid)
                tier1.append(store.nodes[cid])
    return _chronological(tier1), tier2


def _accumulate(
    zoomed_tier1: list[MemoryNode],
    searched: list[MemoryNode],
    tier2: list[MemoryNode],
    limit: int,
) -> list[MemoryNode]:
    acc: list[MemoryNode] = []
    seen: set[str] = set()
    for bucket in (zoomed_tier1, searched, tier2):
        for node in bucket:
            if len(acc) >= limit:
                return acc
            if node.id not in seen:
                seen.add(node.id)
                acc.append(node)
    return acc


def _fallback(
    history: Sequence[Message],
    store: MemoryStore,
    gw: GeneratorGateway,
    trace: list[dict],
    reason: str,
    limit: int,
    window: int,
) -> RetrievalResult:
    bm = retrieve_bm(history, store, gw, k=limit, window=window)
    trace.extend(bm.trace)
    trace.append(_record("fallback", None, reason, bm.memories))
    return RetrievalResult(memories=bm.memories, summary=None, served_from_cache=False, trace=trace)


def retrieve_mm(
    history: Sequence[Message],
    store: MemoryStore,
    gw: GeneratorGateway,
    cache: RetrievalCache,
    *,
    max_loops: int = MAX_LOOPS,
    limit: int = MEMORY_LIMIT,
    window: int = QUERY_WINDOW,
    temperature: float = 0.0,
) -> RetrievalResult:
    """Run the memory-manager agent over a fully built store.

    The loop issues the abstraction-selection prompt at most `max_loops`
    times; a summarizer verdict of exactly "NO" sends it back for another
    selection, and exhausting the loops returns the accumulated memories
    without a summary. The cache is written only when a summary was
    produced, so cached entries are always servable as-is.
    """
    trace: list[dict] = []
    conversation = render_history(history)
    key = history_window_text(history, window)

    entry = cache_lookup(cache, key)
    if entry is not None:
        cached = entry.result
        cached_text = cached.summary if cached.summary else memory_lines(cached.memories)
        answer = gw.chat(
            SUFFICIENCY_PROMPT.format(conversation=conversation, memories=cached_text),
            temperature,
        )
        sufficient = answer.strip().lower().startswith("yes")
        trace.append(_record(
            "cache_check", "prompt1", "yes" if sufficient else "no", cached.memories
        ))
        if sufficient:
            return RetrievalResult(
                memories=list(cached.memories),
                summary=cached.summary,
                served_from_cache=True,
                trace=trace,
            )

    tier3 = _chronological(store.tier_nodes(3))
    if not tier3:
        return _fallback(history, store, gw, trace, "no-abstractions", limit, window)

    selection_prompt = SELECTION_PROMPT.format(
        conversation=conversation, abstractions=numbered_memories(tier3)
    )
    best_effort: list[MemoryNode] = []
    for _ in range(max_loops):
        reply = gw.chat(selection_prompt, temperature)
        try:
            indices = parse_selection(reply, len(tier3))
        except MalformedSelection:
            trace.append(_record("select", "prompt2", "malformed"))
            return _fallback(history, store, gw, trace, "bm", limit, window)
        selected = [tier3[i - 1] for i in indices]
        trace.append(_record(
            "select", "prompt2", ",".join(str(i) for i in indices), selected
        ))

        zoomed_tier1, tier2 = _zoom(store, selected)
        trace.append(_record(
            "zoom", None, f"tier2={len(tier2)} tier1={len(zoomed_tier1)}",
            zoomed_tier1 + tier2,
        ))

        searched: list[MemoryNode] = []
        if len(zoomed_tier1) < limit:
            vector = gw.embed(key)
            searched = [node for node, _ in search_tier(store, 1, vector, limit)]
            trace.append(_record("search", None, f"tier=1 k={limit}", searched))

        accumulated = _accumulate(zoomed_tier1, searched, tier2, limit)
        trace.append(_record("accumulate", None, str(len(accumulated)), accumulated))
        best_effort = accumulated

        output = gw.chat(
            SUMMARY_PROMPT.format(conversation=conversation, memories=memory_lines(accumulated)),
            temperature,
        )
        if output.strip() == "NO":
            trace.append(_record("summarize", "prompt3", "retry"))
            continue
        trace.append(_record("summarize", "prompt3", "summary", accumulated))
        result = RetrievalResult(
            memories=accumulated,
            summary=output.strip(),
            served_from_cache=False,
            trace=trace,
        )
        cache_update(cache, key, result)
        return result

    trace.append(_record("exhausted", None, f"loops={max_loops}", best_effort))
    return RetrievalResult(
        memories=best_effort, summary=None, served_from_cache=False, trace=trace
    )
