"""SFT dataset construction: conversations -> (context, reply) pairs.

Each example pairs a rendered conversation prefix with the owner's next run
of consecutive messages. Size tiers cap the example count and carry the
training-epoch setting used when emitting fine-tune config documents for an
external training platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable

from .ingest import Conversation, format_timestamp, parse_timestamp, render_message_line

MESSAGE_DELIMITER = "<|msg|>"
OWNER_DISPLAY = "Me"


class UnknownTier(Exception):
    pass


@dataclass(frozen=True)
class TrainingExample:
    context: str
    target: str
    ts: datetime

    def to_dict(self) -> dict:
        return {"input": self.context, "output": self.target, "ts": format_timestamp(self.ts)}

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingExample":
        return cls(context=raw["input"], target=raw["output"], ts=parse_timestamp(raw["ts"]))


@dataclass(frozen=True)
class DatasetTier:
    name: str
    cap: int | None
    epochs: int


TIERS: dict[str, DatasetTier] = {
    "B500": DatasetTier(name="B500", cap=500, epochs=5),
    "B4K": DatasetTier(name="B4K", cap=4000, epochs=4),
    "BFull": DatasetTier(name="BFull", cap=None, epochs=3),
}


def get_tier(name: str) -> DatasetTier:
    if name not in TIERS:
        raise UnknownTier(f"unknown dataset tier {name!r}; expected one of {sorted(TIERS)}")
    return TIERS[name]


def build_examples(conversations: Iterable[Conversation], owner: str) -> list[TrainingExample]:
    """One example per maximal run of consecutive owner messages.

    The run's target is its messages joined with the multi-message
    delimiter; the context is every prior message rendered chronologically,
    the owner shown as "Me". Runs with no preceding non-owner message are
    skipped: an empty or owner-only prefix teaches nothing about
    conditioning.
    """
    examples: list[TrainingExample] = []
    for conv in conversations:
        msgs = conv.messages
        i = 0
        while i < len(msgs):
            if msgs[i].sender != owner:
                i += 1
                continue
            j = i
            while j < len(msgs) and msgs[j].sender == owner:
                j += 1
            if any(m.sender != owner for m in msgs[:i]):
                context = "\n".join(
                    render_message_line(
                        OWNER_DISPLAY if m.sender == owner else m.sender, m.timestamp, m.text
                    )
                    for m in msgs[:i]
                )
                target = MESSAGE_DELIMITER.join(m.text for m in msgs[i:j])
                examples.append(TrainingExample(context=context, target=target, ts=msgs[i].timestamp))
            i = j
    return examples


def cap_dataset(examples: list[TrainingExample], tier: DatasetTier) -> list[TrainingExample]:
    """Keep the ``tier.cap`` most recent examples; output sorted by ts ascending."""
    ordered = sorted(examples, key=lambda e: e.ts)
    if tier.cap is not None and len(ordered) > tier.cap:
        ordered = ordered[len(ordered) - tier.cap :]
    return ordered


def emit_finetune_config(tier: DatasetTier) -> dict:
    """Fine-tune settings document for the external training platform."""
    if tier.name not in TIERS:
        raise UnknownTier(f"unknown dataset tier {tier.name!r}")
    return {
        "base_model": "Llama-3.1-8b-Instruct",
        "learning_rate": 1e-4,
        "batch_size": 8,
        "epochs": tier.epochs,
        "optimizer": "AdamW",
        "weight_decay": 0.01,
        "schedule": "linear-with-warmup",
        "precision": "bf16",
        "lora_rank": 8,
        "lora_alpha": 16,
        "lora_dropout": 0.05,
    }


def save_examples(examples: Iterable[TrainingExample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")


def load_examples(path: str) -> list[TrainingExample]:
    out: list[TrainingExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TrainingExample.from_dict(json.loads(line)))
    return out
