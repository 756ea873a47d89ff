"""Impersonator runtime: prompt assembly, reply splitting, send-delay pacing.

A persona is one impersonation configuration: identity, optional style
exemplar, optional memory retrieval, sampling temperature. One gateway
call produces a whole turn; the model separates consecutive messages with
the ``<|msg|>`` token and each message is scheduled with a typing delay
calibrated to the impersonated person's words-per-minute speed.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from datetime import date
from typing import Callable, Sequence

from .dataset import MESSAGE_DELIMITER
from .gateway import GatewayConfig, GatewayError, GeneratorGateway
from .ingest import Message, render_message_line, render_timestamp
from .retrieval import RetrievalResult

ICL_MIN_MESSAGES = 15
ICL_MAX_MESSAGES = 38
DEFAULT_TEMPERATURE = 0.8
DELAY_FLOOR_S = 0.5
JITTER_RANGE = (0.75, 1.25)
THINK_RANGE = (1.0, 4.0)
GATEWAY_RETRIES = 2

MEMORY_MODES = ("none", "BM", "MM")

_RENDERED_LINE_RE = re.compile(r"^\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2} ")


class InvalidProfile(ValueError):
    pass


class EmptyReply(Exception):
    """The completion held no non-whitespace message segments."""


def count_icl_messages(snippet: str) -> int:
    """Messages in a rendered example conversation.

    A timestamped line is one message, plus one more per delimiter in it;
    unprefixed lines are wrapped continuations of the previous message.
    """
    count = 0
    for line in snippet.splitlines():
        if _RENDERED_LINE_RE.match(line):
            count += 1
        count += line.count(MESSAGE_DELIMITER)
    return count


@dataclass(frozen=True)
class PersonaProfile:
    name: str
    wpm: float
    icl_snippet: str | None = None
    memory_mode: str = "none"
    gateway: GatewayConfig | None = None
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if not self.name:
            raise InvalidProfile("name must be non-empty")
        if self.wpm <= 0:
            raise InvalidProfile("wpm must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidProfile("temperature must be in [0, 2]")
        if self.memory_mode not in MEMORY_MODES:
            raise InvalidProfile(f"memory_mode must be one of {MEMORY_MODES}")
        if self.icl_snippet is not None:
            n = count_icl_messages(self.icl_snippet)
            if not ICL_MIN_MESSAGES <= n <= ICL_MAX_MESSAGES:
                raise InvalidProfile(
                    f"icl snippet has {n} messages, need {ICL_MIN_MESSAGES}..{ICL_MAX_MESSAGES}"
                )

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "wpm": self.wpm,
            "icl_snippet": self.icl_snippet,
            "memory_mode": self.memory_mode,
            "temperature": self.temperature,
        }
        if self.gateway is not None:
            out["gateway"] = {
                "base_url": self.gateway.base_url,
                "chat_model": self.gateway.chat_model,
                "embed_model": self.gateway.embed_model,
                "api_key_env": self.gateway.api_key_env,
                "chat_role": self.gateway.chat_role,
                "timeout_s": self.gateway.timeout_s,
            }
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PersonaProfile":
        gateway = None
        if raw.get("gateway"):
            gateway = GatewayConfig.from_dict(raw["gateway"])
        return cls(
            name=raw["name"],
            wpm=float(raw["wpm"]),
            icl_snippet=raw.get("icl_snippet"),
            memory_mode=raw.get("memory_mode", "none"),
            gateway=gateway,
            temperature=float(raw.get("temperature", DEFAULT_TEMPERATURE)),
        )


@dataclass(frozen=True)
class ReplyPlan:
    messages: tuple[str, ...]
    delays: tuple[float, ...]

    def __post_init__(self):
        if len(self.messages) != len(self.delays):
            raise ValueError("one delay per message")
        if any(d < DELAY_FLOOR_S for d in self.delays):
            raise ValueError(f"delays must be >= {DELAY_FLOOR_S}")


# --- prompt assembly ---------------------------------------------------------

HEADER_TEMPLATE = (
    "Today's date is {today}. You are a human being named {name}. "
    "You are not an AI. Respond as yourself. You will first be given the "
    "topic of conversation, then any existing conversation history if there "
    "is any. Be sure to reply in the style of {name}. Use the "
    "'<|msg|>' token to send multiple messages at once if you wish."
)

ICL_PREAMBLE = (
    "Here is an example conversation between {name} and another individual. "
    "This conversation is not relevant to the current conversation. Use this "
    "conversation to help aid you to emulate stylistically on how to "
    "communicate in your conversations. 'Me' is the user that you are "
    "imitating."
)

MEMORIES_PREAMBLE = (
    "Here are some of your relevant memories + facts about yourself that may "
    "help you respond authentically. Pay careful attention to the date of "
    "the memories, as events have occurred in the past, and you should make "
    "reference to them in the appropriate time manner."
)

CLOSING_LINE = "Now you may begin the conversation."


def render_history_as(profile_name: str, history: Sequence[Message]) -> str:
    """Render history lines with the persona's own messages labeled 'Me'."""
    lines = []
    for m in history:
        display = "Me" if m.sender == profile_name else m.sender
        lines.append(render_message_line(display, m.timestamp, m.text))
    return "\n".join(lines)


def _memories_block(retrieval: RetrievalResult) -> str:
    nodes = sorted(retrieval.memories, key=lambda n: (n.date_start, n.id))
    lines = [f"[{render_timestamp(n.date_start)}] {n.text}" for n in nodes]
    if retrieval.summary:
        lines.append(f"[context summary] {retrieval.summary}")
    return "\n".join(["[BEGIN MEMORIES]"] + lines + ["[END MEMORIES]"])


def assemble_prompt(
    profile: PersonaProfile,
    today: date,
    topic: str,
    history: Sequence[Message],
    retrieval: RetrievalResult | None = None,
) -> str:
    """Build the full system prompt; sections without content disappear."""
    blocks = [HEADER_TEMPLATE.format(today=today.isoformat(), name=profile.name)]
    if profile.icl_snippet is not None:
        blocks.append(ICL_PREAMBLE.format(name=profile.name))
        blocks.append(
            "\n".join(
                ["[BEGIN EXAMPLE CONVERSATION]", profile.icl_snippet, "[END EXAMPLE CONVERSATION]"]
            )
        )
    if retrieval is not None and retrieval.memories:
        blocks.append(MEMORIES_PREAMBLE)
        blocks.append(_memories_block(retrieval))
    blocks.append(f"The topic of conversation is: {topic}")
    if history:
        blocks.append(
            "\n".join(["[BEGIN CONVERSATION]", render_history_as(profile.name, history), "[END CONVERSATION]"])
        )
    blocks.append(CLOSING_LINE)
    return "\n\n".join(blocks)


# --- reply mechanics ---------------------------------------------------------

def split_messages(completion: str) -> list[str]:
    segments = [seg.strip() for seg in completion.split(MESSAGE_DELIMITER)]
    segments = [seg for seg in segments if seg]
    if not segments:
        raise EmptyReply("completion contained no message text")
    return segments


def schedule_delays(
    messages: Sequence[str],
    wpm: float,
    seed: int,
    *,
    jitter_range: tuple[float, float] = JITTER_RANGE,
    think_range: tuple[float, float] = THINK_RANGE,
    floor: float = DELAY_FLOOR_S,
) -> list[float]:
    """Seconds to wait before sending each message of a turn.

    delay = think (first message only) + words / wpm * 60 * jitter,
    clamped below at the floor. The rng draws think time first, then one
    jitter per message, so schedules are reproducible from the seed.
    """
    if wpm <= 0:
        raise ValueError("wpm must be positive")
    rng = random.Random(seed)
    think = rng.uniform(*think_range)
    delays = []
    for i, text in enumerate(messages):
        jitter = rng.uniform(*jitter_range)
        typing = len(text.split()) / wpm * 60.0 * jitter
        delay = (think if i == 0 else 0.0) + typing
        delays.append(max(floor, delay))
    return delays


RetrievalFn = Callable[[Sequence[Message]], RetrievalResult]


def generate_reply(
    profile: PersonaProfile,
    topic: str,
    history: Sequence[Message],
    retrieval_fn: RetrievalFn | None,
    gw: GeneratorGateway,
    *,
    today: date | None = None,
    seed: int = 0,
) -> ReplyPlan:
    """One full persona turn: retrieve, prompt, generate, split, pace.

    Gateway failures are retried up to twice; the final failure propagates
    so the session can abort.
    """
    retrieval = None
    if profile.memory_mode != "none":
        if retrieval_fn is None:
            raise ValueError(f"memory_mode={profile.memory_mode} requires a retrieval_fn")
        retrieval = retrieval_fn(history)

    if today is None:
        today = date.today()
    prompt = assemble_prompt(profile, today, topic, history, retrieval)

    last_error: GatewayError | None = None
    completion = None
    for _ in range(1 + GATEWAY_RETRIES):
        try:
            completion = gw.chat(prompt, profile.temperature)
            break
        except GatewayError as exc:
            last_error = exc
    if completion is None:
        assert last_error is not None
        raise last_error

    messages = split_messages(completion)
    delays = schedule_delays(messages, profile.wpm, seed)
    return ReplyPlan(messages=tuple(messages), delays=tuple(delays))
