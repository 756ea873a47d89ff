"""Model gateways: chat completion + text embedding behind one small interface.

Two providers ship with the package: an HTTP provider speaking the
chat-completions wire format, and a scripted replay provider that serves
canned completions/vectors for tests and offline runs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import requests

DEFAULT_EMBED_MODEL = "text-embedding-3-small"
REQUEST_TIMEOUT_S = 30.0


class GatewayError(Exception):
    """A gateway call failed; callers may retry."""


class GeneratorGateway(Protocol):
    """Chat-completion plus embedding capability."""

    def chat(self, prompt: str, temperature: float) -> str: ...

    def embed(self, text: str) -> list[float]: ...


@dataclass
class GatewayConfig:
    """Connection settings for the HTTP provider.

    The API key is read from the environment variable named by
    ``api_key_env`` at call time, never stored in config files.
    """

    base_url: str
    chat_model: str
    embed_model: str = DEFAULT_EMBED_MODEL
    api_key_env: str = "DOPPEL_API_KEY"
    chat_role: str = "system"
    timeout_s: float = REQUEST_TIMEOUT_S

    @classmethod
    def from_dict(cls, raw: dict) -> "GatewayConfig":
        return cls(
            base_url=raw["base_url"],
            chat_model=raw["chat_model"],
            embed_model=raw.get("embed_model", DEFAULT_EMBED_MODEL),
            api_key_env=raw.get("api_key_env", "DOPPEL_API_KEY"),
            chat_role=raw.get("chat_role", "system"),
            timeout_s=float(raw.get("timeout_s", REQUEST_TIMEOUT_S)),
        )


class HttpGateway:
    """Chat-completions-style HTTP client.

    Request/response shapes are fixed: chat posts
    ``{"model", "messages": [{"role", "content"}], "temperature"}`` and reads
    ``choices[0].message.content``; embeddings post ``{"model", "input"}``
    and read ``data[0].embedding``. The same shapes serve hosted fine-tuned
    models and stock models.
    """

    def __init__(self, config: GatewayConfig, session: requests.Session | None = None):
        self.config = config
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, prompt: str, temperature: float) -> str:
        payload = {
            "model": self.config.chat_model,
            "messages": [{"role": self.config.chat_role, "content": prompt}],
            "temperature": temperature,
        }
        try:
            resp = self._session.post(
                self.config.base_url.rstrip("/") + "/chat/completions",
                json=payload,
                headers=self._headers(),
                timeout=self.config.timeout_s,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"chat call failed: {exc}") from exc

    def embed(self, text: str) -> list[float]:
        payload = {"model": self.config.embed_model, "input": text}
        try:
            resp = self._session.post(
                self.config.base_url.rstrip("/") + "/embeddings",
                json=payload,
                headers=self._headers(),
                timeout=self.config.timeout_s,
            )
            resp.raise_for_status()
            return list(resp.json()["data"][0]["embedding"])
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"embedding call failed: {exc}") from exc


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def hash_embedding(text: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding derived from the text content.

    Stable across processes (content hash, not ``hash()``); unit norm.
    """
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = np.ones(dim)
        norm = float(np.linalg.norm(vec))
    return [float(x) for x in vec / norm]


@dataclass
class ScriptedGateway:
    """Replay provider: maps prompt hashes (or ordered sequences) to outputs.

    Lookup order for chat: exact prompt hash, then the next entry of
    ``chat_sequence``. Same for embeddings. Any unmatched call raises
    GatewayError, so a test fails loudly instead of inventing output.
    ``hash_embedding_dim``, when set, derives embeddings from the text hash
    instead; that is an explicit matching rule, not a silent default.

    Every call is appended to ``calls`` as a dict, so tests can assert on
    issued prompts, temperatures, and call counts.
    """

    chat_by_hash: dict[str, str] = field(default_factory=dict)
    chat_sequence: list[str] = field(default_factory=list)
    embed_by_hash: dict[str, list[float]] = field(default_factory=dict)
    embed_sequence: list[list[float]] = field(default_factory=list)
    hash_embedding_dim: int | None = None
    calls: list[dict] = field(default_factory=list)
    _chat_cursor: int = 0
    _embed_cursor: int = 0

    @staticmethod
    def _keyed(raw, value_field: str) -> dict:
        """Accept either {hash: value} or [{prompt|hash, <value_field>}]."""
        if isinstance(raw, dict):
            return dict(raw)
        out = {}
        for entry in raw:
            key = entry["hash"] if "hash" in entry else prompt_hash(entry["prompt"])
            out[key] = entry[value_field]
        return out

    @classmethod
    def from_file(cls, path: str) -> "ScriptedGateway":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        embeds = cls._keyed(raw.get("embeddings", {}), "vector")
        return cls(
            chat_by_hash=cls._keyed(raw.get("chat", {}), "completion"),
            chat_sequence=list(raw.get("chat_sequence", [])),
            embed_by_hash={k: list(v) for k, v in embeds.items()},
            embed_sequence=[list(v) for v in raw.get("embedding_sequence", [])],
            hash_embedding_dim=raw.get("hash_embedding_dim"),
        )

    def chat(self, prompt: str, temperature: float) -> str:
        self.calls.append({"kind": "chat", "prompt": prompt, "temperature": temperature})
        key = prompt_hash(prompt)
        if key in self.chat_by_hash:
            return self.chat_by_hash[key]
        if self._chat_cursor < len(self.chat_sequence):
            out = self.chat_sequence[self._chat_cursor]
            self._chat_cursor += 1
            return out
        raise GatewayError(f"no scripted completion for prompt hash {key[:12]}…")

    def embed(self, text: str) -> list[float]:
        self.calls.append({"kind": "embed", "text": text})
        key = prompt_hash(text)
        if key in self.embed_by_hash:
            return list(self.embed_by_hash[key])
        if self._embed_cursor < len(self.embed_sequence):
            out = self.embed_sequence[self._embed_cursor]
            self._embed_cursor += 1
            return list(out)
        if self.hash_embedding_dim is not None:
            return hash_embedding(text, self.hash_embedding_dim)
        raise GatewayError(f"no scripted embedding for text hash {key[:12]}…")

    def script_chat(self, prompt: str, completion: str) -> None:
        self.chat_by_hash[prompt_hash(prompt)] = completion

    def script_embedding(self, text: str, vector: list[float]) -> None:
        self.embed_by_hash[prompt_hash(text)] = list(vector)

    def call_count(self, kind: str) -> int:
        return sum(1 for c in self.calls if c["kind"] == kind)


def build_gateway(raw: dict) -> GeneratorGateway:
    """Construct a gateway from a config dict (``provider``: http | replay)."""
    provider = raw.get("provider", "http")
    if provider == "http":
        return HttpGateway(GatewayConfig.from_dict(raw))
    if provider == "replay":
        return ScriptedGateway.from_file(raw["path"])
    raise ValueError(f"unknown gateway provider: {provider!r}")
