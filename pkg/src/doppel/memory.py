"""Three-tier hierarchical memory: dated facts, consolidated episodes, abstractions.

Tier 1 is synthesized from individual conversations, tier 2 groups
temporally/causally related tier-1 memories, tier 3 captures recurring
patterns across tier-2 memories. Each tier's grouping partitions the tier
below, so every leaf memory stays reachable from the top.

The store is built offline, embedded per node, and immutable afterwards;
retrieval scans tiers exhaustively (corpus scale makes an ANN index
pointless).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from .ingest import (
    Conversation,
    format_timestamp,
    parse_timestamp,
    render_message_line,
    render_timestamp,
)
from .gateway import GeneratorGateway

STORE_VERSION = "1"
GENERATION_ATTEMPTS = 3  # initial call + 2 retries
DEFAULT_WINDOW = 50
WINDOW_OVERLAP_FRACTION = 5  # overlap = window // 5


class MemoryError_(Exception):
    pass


class MalformedGeneration(MemoryError_):
    """Model output did not match the required line grammar after retries."""


class DimensionMismatch(MemoryError_):
    pass


class StoreInvariantViolation(MemoryError_):
    pass


@dataclass(frozen=True)
class MemoryNode:
    id: str
    tier: int
    text: str
    date_start: datetime
    date_end: datetime
    children: tuple[str, ...] = ()
    sources: tuple[str, ...] = ()
    embedding: tuple[float, ...] = ()

    def embed_text(self) -> str:
        # The bracketed date prefix is part of what gets embedded, so
        # temporally-phrased queries can match.
        return f"[{render_timestamp(self.date_start)}] {self.text}"

    def rendered(self) -> str:
        return self.embed_text()

    def date_label(self) -> str:
        if self.date_start == self.date_end:
            return render_timestamp(self.date_start)
        return f"{render_timestamp(self.date_start)} .. {render_timestamp(self.date_end)}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier,
            "text": self.text,
            "date_start": format_timestamp(self.date_start),
            "date_end": format_timestamp(self.date_end),
            "children": list(self.children),
            "sources": list(self.sources),
            "embedding": list(self.embedding),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MemoryNode":
        return cls(
            id=raw["id"],
            tier=int(raw["tier"]),
            text=raw["text"],
            date_start=parse_timestamp(raw["date_start"]),
            date_end=parse_timestamp(raw["date_end"]),
            children=tuple(raw.get("children", [])),
            sources=tuple(raw.get("sources", [])),
            embedding=tuple(float(x) for x in raw.get("embedding", [])),
        )


class MemoryStore:
    """Immutable-after-build node collection with per-tier embedding indices."""

    def __init__(self, embed_dim: int = 0, built_at: str = ""):
        self.nodes: dict[str, MemoryNode] = {}
        self.embed_dim = embed_dim
        self.built_at = built_at
        self._tier_cache: dict[int, tuple[list[str], np.ndarray]] = {}

    def add(self, node: MemoryNode) -> None:
        if node.id in self.nodes:
            raise StoreInvariantViolation(f"duplicate node id {node.id}")
        if node.embedding:
            if self.embed_dim == 0:
                self.embed_dim = len(node.embedding)
            elif len(node.embedding) != self.embed_dim:
                raise StoreInvariantViolation(
                    f"node {node.id} embedding dim {len(node.embedding)} != {self.embed_dim}"
                )
        self.nodes[node.id] = node
        self._tier_cache.pop(node.tier, None)

    def tier_nodes(self, tier: int) -> list[MemoryNode]:
        return [n for n in self.nodes.values() if n.tier == tier]

    def _tier_index(self, tier: int) -> tuple[list[str], np.ndarray]:
        if tier not in self._tier_cache:
            nodes = self.tier_nodes(tier)
            ids = [n.id for n in nodes]
            if nodes:
                matrix = np.array([n.embedding for n in nodes], dtype=np.float64)
            else:
                matrix = np.zeros((0, self.embed_dim), dtype=np.float64)
            self._tier_cache[tier] = (ids, matrix)
        return self._tier_cache[tier]

    def validate(self, require_reachability: bool = True) -> None:
        """Assert the hierarchy invariants; raises StoreInvariantViolation."""
        by_tier: dict[int, list[MemoryNode]] = {1: [], 2: [], 3: []}
        for node in self.nodes.values():
            if node.tier not in (1, 2, 3):
                raise StoreInvariantViolation(f"node {node.id} has tier {node.tier}")
            by_tier[node.tier].append(node)
            if node.embedding and len(node.embedding) != self.embed_dim:
                raise StoreInvariantViolation(f"node {node.id} embedding dim mismatch")
            if node.tier == 1:
                if node.children or not node.sources:
                    raise StoreInvariantViolation(f"tier-1 node {node.id} link shape wrong")
            else:
                if not node.children:
                    raise StoreInvariantViolation(f"tier-{node.tier} node {node.id} has no children")
                for cid in node.children:
                    child = self.nodes.get(cid)
                    if child is None:
                        raise StoreInvariantViolation(f"node {node.id} links unknown child {cid}")
                    if child.tier != node.tier - 1:
                        raise StoreInvariantViolation(
                            f"node {node.id} (tier {node.tier}) links tier-{child.tier} child"
                        )
                child_nodes = [self.nodes[c] for c in node.children]
                if node.date_start != min(c.date_start for c in child_nodes):
                    raise StoreInvariantViolation(f"node {node.id} date_start does not span children")
                if node.date_end != max(c.date_end for c in child_nodes):
                    raise StoreInvariantViolation(f"node {node.id} date_end does not span children")

        for parent_tier in (2, 3):
            seen: set[str] = set()
            for node in by_tier[parent_tier]:
                for cid in node.children:
                    if cid in seen:
                        raise StoreInvariantViolation(
                            f"child {cid} claimed by multiple tier-{parent_tier} parents"
                        )
                    seen.add(cid)
            lower_ids = {n.id for n in by_tier[parent_tier - 1]}
            if require_reachability and seen != lower_ids:
                missing = sorted(lower_ids - seen)
                raise StoreInvariantViolation(
                    f"tier-{parent_tier - 1} nodes not covered: {missing[:5]}"
                )

    def to_dict(self) -> dict:
        return {
            "version": STORE_VERSION,
            "embed_dim": self.embed_dim,
            "built_at": self.built_at,
            "nodes": [n.to_dict() for n in self.nodes.values()],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "MemoryStore":
        if "version" not in raw:
            raise StoreInvariantViolation("store document missing version field")
        store = cls(embed_dim=int(raw["embed_dim"]), built_at=raw.get("built_at", ""))
        for node_raw in raw["nodes"]:
            store.add(MemoryNode.from_dict(node_raw))
        return store

    @classmethod
    def load(cls, path: str) -> "MemoryStore":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def search_tier(
    store: MemoryStore, tier: int, query_vector: list[float] | np.ndarray, k: int
) -> list[tuple[MemoryNode, float]]:
    """Top-k nodes of one tier by cosine similarity, ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query_vector, dtype=np.float64)
    ids, matrix = store._tier_index(tier)
    if not ids:
        return []
    if query.shape != (store.embed_dim,):
        raise DimensionMismatch(
            f"query dim {query.shape} does not match store dim {store.embed_dim}"
        )
    qnorm = float(np.linalg.norm(query))
    norms = np.linalg.norm(matrix, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = matrix @ query / (norms * qnorm)
    sims = np.where((norms == 0.0) | (qnorm == 0.0), 0.0, sims)
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:k]
    return [(store.nodes[ids[i]], float(sims[i])) for i in order]


# --- generation grammar -----------------------------------------------------

MEMORY_LINE_RE = re.compile(
    r"^\s*\[(\d{4}-\d{2}-\d{2})[ T](\d{2}:\d{2}:\d{2})\]\s*(.+?)\s*$"
)
GROUP_LINE_RE = re.compile(r"^\s*\[([0-9,\s]+)\]\s*(.+?)\s*$")


def parse_memory_lines(completion: str) -> list[tuple[datetime, str]]:
    out: list[tuple[datetime, str]] = []
    for line in completion.splitlines():
        m = MEMORY_LINE_RE.match(line)
        if not m:
            continue
        try:
            ts = parse_timestamp(f"{m.group(1)}T{m.group(2)}Z")
        except ValueError:
            continue
        out.append((ts, m.group(3)))
    return out


def parse_group_lines(completion: str, count: int) -> list[tuple[list[int], str]]:
    """Parse ``[1, 3] text`` lines; indices are 1-based into a numbered list.

    Out-of-range indices are dropped (repair); a group left empty is
    discarded. Returns [] when nothing parses, which callers treat as a
    malformed generation.
    """
    groups: list[tuple[list[int], str]] = []
    for line in completion.splitlines():
        m = GROUP_LINE_RE.match(line)
        if not m:
            continue
        indices: list[int] = []
        for tok in m.group(1).split(","):
            tok = tok.strip()
            if not tok.isdigit():
                continue
            idx = int(tok)
            if 1 <= idx <= count and idx not in indices:
                indices.append(idx)
        if indices:
            groups.append((indices, m.group(2)))
    return groups


# --- stage prompts ----------------------------------------------------------

SYNTHESIS_PROMPT = """\
You are building a long-term memory archive for {owner}.
Read the conversation below and extract the personal facts, events, and plans it reveals about {owner}. Write one memory per line, each line in exactly this format:

[YYYY-MM-DD HH:MM:SS] <memory statement>

Use the timestamp of the message the memory comes from, and write each statement in third person about {owner}. Output only memory lines.

[BEGIN CONVERSATION]
{conversation}
[END CONVERSATION]"""

CONSOLIDATION_PROMPT = """\
You maintain a long-term memory archive. Below is a numbered list of dated memories. Group memories that describe the same experience or are temporally or causally related, and write one consolidated memory per group that combines them while preserving their core theme. Each group must be one line in exactly this format:

[<numbers of the member memories, comma-separated>] <consolidated memory>

Every memory belongs to at most one group; a memory that stands alone forms its own group. Output only group lines.

{memories}"""

ABSTRACTION_PROMPT = """\
You maintain a long-term memory archive. Below is a numbered list of consolidated memories. Identify recurring patterns across them and write one abstract generalization per pattern, such as a lasting interest, habit, relationship, or life phase, covering every memory. Each generalization must be one line in exactly this format:

[<numbers of the member memories, comma-separated>] <generalization>

Every memory belongs to at most one group; a memory that stands alone forms its own group. Output only generalization lines.

{memories}"""


def synthesis_prompt(conv: Conversation) -> str:
    rendered = "\n".join(
        render_message_line(m.sender, m.timestamp, m.text) for m in conv.messages
    )
    return SYNTHESIS_PROMPT.format(owner=conv.owner, conversation=rendered)


def numbered_memories(nodes: list[MemoryNode]) -> str:
    return "\n".join(f"{i + 1}. [{n.date_label()}] {n.text}" for i, n in enumerate(nodes))


def consolidation_prompt(nodes: list[MemoryNode]) -> str:
    return CONSOLIDATION_PROMPT.format(memories=numbered_memories(nodes))


def abstraction_prompt(nodes: list[MemoryNode]) -> str:
    return ABSTRACTION_PROMPT.format(memories=numbered_memories(nodes))


# --- build stages -----------------------------------------------------------

@dataclass
class BuildReport:
    """What the generation stages skipped or repaired."""

    skipped_conversations: list[str] = field(default_factory=list)
    malformed_windows: int = 0
    identity_fallbacks: int = 0


def _clamp(ts: datetime, lo: datetime, hi: datetime) -> datetime:
    return max(lo, min(hi, ts))


def synthesize_first_order(
    conv: Conversation,
    gw: GeneratorGateway,
    *,
    temperature: float = 0.0,
    id_start: int = 0,
    report: BuildReport | None = None,
) -> list[MemoryNode]:
    """Extract tier-1 memories from one conversation.

    Memory timestamps are clamped into the conversation's own range. A
    generation with no parseable lines is retried; if every attempt is
    malformed the conversation is skipped and recorded in the report.
    """
    prompt = synthesis_prompt(conv)
    parsed: list[tuple[datetime, str]] | None = None
    for _ in range(GENERATION_ATTEMPTS):
        completion = gw.chat(prompt, temperature)
        lines = parse_memory_lines(completion)
        if lines or not completion.strip():
            parsed = lines
            break
    if parsed is None:
        if report is not None:
            report.skipped_conversations.append(conv.id)
        return []

    nodes: list[MemoryNode] = []
    for offset, (ts, text) in enumerate(parsed):
        ts = _clamp(ts, conv.start, conv.end)
        node = MemoryNode(
            id=f"m1-{id_start + offset:06d}",
            tier=1,
            text=text,
            date_start=ts,
            date_end=ts,
            sources=(conv.id,),
        )
        nodes.append(replace(node, embedding=tuple(gw.embed(node.embed_text()))))
    return nodes


def _window_bounds(n: int, window: int, overlap: int) -> list[tuple[int, int]]:
    if n <= 0:
        return []
    overlap = min(overlap, window - 1)
    step = window - overlap
    bounds = []
    start = 0
    while True:
        end = min(start + window, n)
        bounds.append((start, end))
        if end >= n:
            return bounds
        start += step


def _group_stage(
    inputs: list[MemoryNode],
    gw: GeneratorGateway,
    out_tier: int,
    prompt_fn,
    *,
    temperature: float = 0.0,
    window: int = DEFAULT_WINDOW,
    id_start: int = 0,
    report: BuildReport | None = None,
) -> list[MemoryNode]:
    """Shared machinery for consolidation and abstraction.

    Inputs are processed in chronological windows with overlap; the overlap
    gives the model context across window seams, and membership conflicts
    are repaired by first-window-wins. Nodes left uncovered at the end
    become their own parent (identity fallback), keeping the stage total.
    """
    ordered = sorted(inputs, key=lambda n: (n.date_start, n.id))
    overlap = max(0, window // WINDOW_OVERLAP_FRACTION)
    covered: set[str] = set()
    out: list[MemoryNode] = []
    seq = id_start

    def finish(text: str, members: list[MemoryNode]) -> MemoryNode:
        nonlocal seq
        node = MemoryNode(
            id=f"m{out_tier}-{seq:06d}",
            tier=out_tier,
            text=text,
            date_start=min(m.date_start for m in members),
            date_end=max(m.date_end for m in members),
            children=tuple(m.id for m in members),
        )
        seq += 1
        return replace(node, embedding=tuple(gw.embed(node.embed_text())))

    for lo, hi in _window_bounds(len(ordered), window, overlap):
        window_nodes = ordered[lo:hi]
        if all(n.id in covered for n in window_nodes):
            continue
        prompt = prompt_fn(window_nodes)
        groups: list[tuple[list[int], str]] | None = None
        for _ in range(GENERATION_ATTEMPTS):
            completion = gw.chat(prompt, temperature)
            parsed = parse_group_lines(completion, len(window_nodes))
            if parsed:
                groups = parsed
                break
        if groups is None:
            if report is not None:
                report.malformed_windows += 1
            continue
        for indices, text in groups:
            members = [
                window_nodes[i - 1] for i in indices if window_nodes[i - 1].id not in covered
            ]
            if not members:
                continue
            covered.update(m.id for m in members)
            out.append(finish(text, members))

    for node in ordered:
        if node.id not in covered:
            if report is not None:
                report.identity_fallbacks += 1
            out.append(finish(node.text, [node]))
    return out


def consolidate(
    tier1: list[MemoryNode],
    gw: GeneratorGateway,
    *,
    temperature: float = 0.0,
    window: int = DEFAULT_WINDOW,
    id_start: int = 0,
    report: BuildReport | None = None,
) -> list[MemoryNode]:
    """Group tier-1 memories into tier-2 consolidated episodes."""
    if not tier1:
        raise ValueError("consolidate requires at least one tier-1 node")
    return _group_stage(
        tier1, gw, 2, consolidation_prompt,
        temperature=temperature, window=window, id_start=id_start, report=report,
    )


def abstract(
    tier2: list[MemoryNode],
    gw: GeneratorGateway,
    *,
    temperature: float = 0.0,
    window: int = DEFAULT_WINDOW,
    id_start: int = 0,
    report: BuildReport | None = None,
) -> list[MemoryNode]:
    """Group tier-2 memories into tier-3 abstract generalizations."""
    if not tier2:
        raise ValueError("abstract requires at least one tier-2 node")
    return _group_stage(
        tier2, gw, 3, abstraction_prompt,
        temperature=temperature, window=window, id_start=id_start, report=report,
    )


# --- full build with checkpointing ------------------------------------------

def build_store(
    conversations: list[Conversation],
    gw: GeneratorGateway,
    batch_size: int = DEFAULT_WINDOW,
    *,
    checkpoint_dir: str | None = None,
    temperature: float = 0.0,
    built_at: str = "",
    report: BuildReport | None = None,
) -> MemoryStore:
    """Run the three stages over chronologically ordered conversations.

    With a checkpoint directory, stage-1 progress is persisted per
    conversation and stages 2/3 per stage, so an interrupted build resumes
    to the same final store the uninterrupted run would produce (the
    gateway being deterministic).
    """
    convs = sorted(conversations, key=lambda c: (c.start, c.id))
    ckpt = _Checkpoint(checkpoint_dir) if checkpoint_dir else None

    tier1: list[MemoryNode] = []
    done: dict[str, list[MemoryNode]] = ckpt.load_stage1() if ckpt else {}
    seq = sum(len(v) for v in done.values())
    for conv in convs:
        if conv.id in done:
            tier1.extend(done[conv.id])
            continue
        nodes = synthesize_first_order(
            conv, gw, temperature=temperature, id_start=seq, report=report
        )
        seq += len(nodes)
        tier1.extend(nodes)
        if ckpt:
            ckpt.append_stage1(conv.id, nodes)

    if not tier1:
        store = MemoryStore(embed_dim=0, built_at=built_at)
        store.validate(require_reachability=True)
        return store

    tier2 = ckpt.load_stage("stage2") if ckpt else None
    if tier2 is None:
        tier2 = consolidate(
            tier1, gw, temperature=temperature, window=batch_size, report=report
        )
        if ckpt:
            ckpt.save_stage("stage2", tier2)

    tier3 = ckpt.load_stage("stage3") if ckpt else None
    if tier3 is None:
        tier3 = abstract(
            tier2, gw, temperature=temperature, window=batch_size, report=report
        )
        if ckpt:
            ckpt.save_stage("stage3", tier3)

    store = MemoryStore(built_at=built_at)
    for node in tier1 + tier2 + tier3:
        store.add(node)
    store.validate(require_reachability=True)
    return store


class _Checkpoint:
    def __init__(self, directory: str):
        self.dir = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def load_stage1(self) -> dict[str, list[MemoryNode]]:
        path = self._path("stage1.jsonl")
        done: dict[str, list[MemoryNode]] = {}
        if not os.path.exists(path):
            return done
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                done[rec["conv"]] = [MemoryNode.from_dict(n) for n in rec["nodes"]]
        return done

    def append_stage1(self, conv_id: str, nodes: list[MemoryNode]) -> None:
        with open(self._path("stage1.jsonl"), "a", encoding="utf-8") as fh:
            rec = {"conv": conv_id, "nodes": [n.to_dict() for n in nodes]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def load_stage(self, name: str) -> list[MemoryNode] | None:
        path = self._path(f"{name}.json")
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return [MemoryNode.from_dict(n) for n in json.load(fh)]

    def save_stage(self, name: str, nodes: list[MemoryNode]) -> None:
        tmp = self._path(f"{name}.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump([n.to_dict() for n in nodes], fh, ensure_ascii=False)
        os.replace(tmp, self._path(f"{name}.json"))
