"""Message-history ingestion: parse exports, segment, quality-filter, redact.

A conversation is a maximal run of messages with no inter-message gap
strictly exceeding the configured threshold (6 hours by default). All
operations here are pure transformations over immutable message lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable

DEFAULT_GAP = timedelta(hours=6)


class IngestError(Exception):
    pass


class UnknownFormat(IngestError):
    pass


class UnsortedInput(IngestError):
    pass


def parse_timestamp(raw: str) -> datetime:
    """Parse an RFC-3339 timestamp to a UTC datetime at second resolution."""
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def render_timestamp(ts: datetime) -> str:
    """Human-facing form used in prompts and rendered contexts."""
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def render_message_line(sender_display: str, ts: datetime, text: str) -> str:
    return f"{render_timestamp(ts)} {sender_display}: {text}"


@dataclass(frozen=True)
class Message:
    sender: str
    timestamp: datetime
    text: str

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "timestamp": format_timestamp(self.timestamp),
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Message":
        return cls(
            sender=str(raw["sender"]),
            timestamp=parse_timestamp(str(raw["timestamp"])),
            text=str(raw["text"]),
        )


@dataclass(frozen=True)
class Conversation:
    """A gap-delimited grouping of messages, owned by the impersonated person."""

    id: str
    owner: str
    messages: tuple[Message, ...]

    @property
    def start(self) -> datetime:
        return self.messages[0].timestamp

    @property
    def end(self) -> datetime:
        return self.messages[-1].timestamp

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "owner": self.owner,
            "messages": [m.to_dict() for m in self.messages],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Conversation":
        return cls(
            id=str(raw["id"]),
            owner=str(raw["owner"]),
            messages=tuple(Message.from_dict(m) for m in raw["messages"]),
        )


@dataclass(frozen=True)
class ConsentLedger:
    """Who may appear in the corpus, and how violations are handled.

    The conversation owner is always treated as consenting, per the ledger
    contract, whether or not they are listed explicitly.
    """

    allowed: frozenset[str]
    mode: str = "drop-message"  # drop-message | drop-conversation

    def __post_init__(self):
        if self.mode not in ("drop-message", "drop-conversation"):
            raise ValueError(f"unknown consent mode: {self.mode!r}")
        if not self.allowed:
            raise ValueError("consent ledger must not be empty")

    @classmethod
    def from_dict(cls, raw: dict) -> "ConsentLedger":
        return cls(allowed=frozenset(raw["allowed"]), mode=raw.get("mode", "drop-message"))


@dataclass(frozen=True)
class QualityPolicy:
    """Thresholds for the quality filter. All must be positive."""

    max_message_chars: int = 2000
    max_consecutive_dupes: int = 2
    min_owner_share: float = 0.1
    min_messages_for_share: int = 10

    def __post_init__(self):
        if self.max_message_chars <= 0 or self.max_consecutive_dupes <= 0:
            raise ValueError("policy thresholds must be positive")
        if self.min_owner_share <= 0 or self.min_messages_for_share <= 0:
            raise ValueError("policy thresholds must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "QualityPolicy":
        return cls(
            max_message_chars=int(raw.get("max_message_chars", 2000)),
            max_consecutive_dupes=int(raw.get("max_consecutive_dupes", 2)),
            min_owner_share=float(raw.get("min_owner_share", 0.1)),
            min_messages_for_share=int(raw.get("min_messages_for_share", 10)),
        )


@dataclass
class ParseReport:
    parsed: int = 0
    malformed: int = 0


@dataclass
class FilterReport:
    """Per-rule counts from one filter_quality pass."""

    excessive_length: int = 0
    consecutive_dupes: int = 0
    imbalance: int = 0
    resegmented: int = 0

    def to_dict(self) -> dict:
        return {
            "excessive-length": self.excessive_length,
            "consecutive-dupes": self.consecutive_dupes,
            "imbalance": self.imbalance,
            "resegmented": self.resegmented,
        }


# --- export parsing -------------------------------------------------------

ExportAdapter = Callable[[bytes], tuple[list[Message], int]]

_ADAPTERS: dict[str, ExportAdapter] = {}


def register_format(format_id: str, adapter: ExportAdapter) -> None:
    _ADAPTERS[format_id] = adapter


def _parse_native(raw: bytes) -> tuple[list[Message], int]:
    # One JSON record per line: {"sender", "timestamp", "text"}. Dirty lines
    # are counted, never fatal.
    messages: list[Message] = []
    malformed = 0
    for line in raw.decode("utf-8", errors="replace").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            msg = Message.from_dict(rec)
        except (json.JSONDecodeError, KeyError, ValueError, TypeError):
            malformed += 1
            continue
        if not msg.text.strip():
            malformed += 1
            continue
        messages.append(msg)
    return messages, malformed


register_format("native", _parse_native)


def parse_export(raw: bytes, format_id: str = "native") -> tuple[list[Message], ParseReport]:
    """Parse an export byte stream into messages sorted by timestamp.

    Returns the messages plus a report of malformed-record counts. An empty
    stream yields an empty list, not an error.
    """
    if format_id not in _ADAPTERS:
        raise UnknownFormat(f"no adapter registered for format {format_id!r}")
    messages, malformed = _ADAPTERS[format_id](raw)
    messages.sort(key=lambda m: m.timestamp)
    return messages, ParseReport(parsed=len(messages), malformed=malformed)


# --- segmentation ---------------------------------------------------------

def segment_conversations(
    messages: list[Message],
    owner: str,
    gap: timedelta = DEFAULT_GAP,
    id_prefix: str = "conv",
) -> list[Conversation]:
    """Partition sorted messages into conversations at gaps strictly > ``gap``.

    A gap of exactly ``gap`` does not split. Raises UnsortedInput if the
    messages are not in non-decreasing timestamp order.
    """
    for a, b in zip(messages, messages[1:]):
        if b.timestamp < a.timestamp:
            raise UnsortedInput("messages must be sorted by timestamp")

    conversations: list[Conversation] = []
    current: list[Message] = []
    for msg in messages:
        if current and (msg.timestamp - current[-1].timestamp) > gap:
            conversations.append(_make_conv(current, owner, id_prefix, len(conversations)))
            current = []
        current.append(msg)
    if current:
        conversations.append(_make_conv(current, owner, id_prefix, len(conversations)))
    return conversations


def _make_conv(messages: list[Message], owner: str, prefix: str, index: int) -> Conversation:
    return Conversation(id=f"{prefix}-{index:05d}", owner=owner, messages=tuple(messages))


def _resegment_one(conv: Conversation, gap: timedelta) -> list[Conversation]:
    """Re-split one conversation whose messages may have been thinned out.

    Keeps the original id when no split is needed; otherwise derives
    suffixed ids so downstream references stay unique and deterministic.
    """
    pieces: list[list[Message]] = []
    current: list[Message] = []
    for msg in conv.messages:
        if current and (msg.timestamp - current[-1].timestamp) > gap:
            pieces.append(current)
            current = []
        current.append(msg)
    if current:
        pieces.append(current)
    if len(pieces) <= 1:
        return [replace(conv, messages=tuple(pieces[0]))] if pieces else []
    return [
        Conversation(id=f"{conv.id}.{i + 1}", owner=conv.owner, messages=tuple(piece))
        for i, piece in enumerate(pieces)
    ]


# --- quality filtering ----------------------------------------------------

def filter_quality(
    conversations: list[Conversation],
    policy: QualityPolicy = QualityPolicy(),
    gap: timedelta = DEFAULT_GAP,
) -> tuple[list[Conversation], FilterReport]:
    """Apply the quality rules; total (never raises on content).

    Rule order: drop over-long messages, collapse consecutive byte-identical
    messages from one sender, re-segment (message removal can open gaps),
    then drop owner-imbalanced conversations. The order makes a second pass
    a no-op.
    """
    report = FilterReport()
    surviving: list[Conversation] = []

    for conv in conversations:
        kept: list[Message] = []
        run_sender: str | None = None
        run_text: str | None = None
        run_len = 0
        for msg in conv.messages:
            if len(msg.text) > policy.max_message_chars:
                report.excessive_length += 1
                continue
            if msg.sender == run_sender and msg.text == run_text:
                run_len += 1
            else:
                run_sender, run_text, run_len = msg.sender, msg.text, 1
            if run_len > policy.max_consecutive_dupes:
                report.consecutive_dupes += 1
                continue
            kept.append(msg)
        if not kept:
            continue

        pieces = _resegment_one(replace(conv, messages=tuple(kept)), gap)
        if len(pieces) > 1:
            report.resegmented += len(pieces) - 1
        for piece in pieces:
            if len(piece.messages) >= policy.min_messages_for_share:
                owner_share = sum(1 for m in piece.messages if m.sender == piece.owner) / len(
                    piece.messages
                )
                if owner_share < policy.min_owner_share:
                    report.imbalance += 1
                    continue
            surviving.append(piece)

    return surviving, report


# --- consent redaction ----------------------------------------------------

def redact_nonconsenting(
    conversations: list[Conversation],
    ledger: ConsentLedger,
    gap: timedelta = DEFAULT_GAP,
) -> list[Conversation]:
    """Remove non-consenting parties per the ledger mode.

    drop-message removes their messages and re-segments so the gap
    invariant stays true; drop-conversation removes any conversation they
    appear in.
    """
    out: list[Conversation] = []
    for conv in conversations:
        allowed = ledger.allowed | {conv.owner}
        senders = {m.sender for m in conv.messages}
        if senders <= allowed:
            out.append(conv)
            continue
        if ledger.mode == "drop-conversation":
            continue
        kept = tuple(m for m in conv.messages if m.sender in allowed)
        if not kept:
            continue
        out.extend(_resegment_one(replace(conv, messages=kept), gap))
    return out


# --- conversation file I/O -------------------------------------------------

def save_conversations(conversations: Iterable[Conversation], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conv.to_dict(), ensure_ascii=False) + "\n")


def load_conversations(path: str) -> list[Conversation]:
    out: list[Conversation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Conversation.from_dict(json.loads(line)))
    return out
