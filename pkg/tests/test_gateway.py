import json

import numpy as np
import pytest

from doppel.gateway import (
    GatewayConfig,
    GatewayError,
    HttpGateway,
    ScriptedGateway,
    build_gateway,
    hash_embedding,
    prompt_hash,
)


class TestHashEmbedding:
    def test_deterministic(self):
        assert hash_embedding("abc", 16) == hash_embedding("abc", 16)

    def test_unit_norm(self):
        vec = np.array(hash_embedding("anything", 32))
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_distinct_texts_differ(self):
        assert hash_embedding("a", 8) != hash_embedding("b", 8)


class TestScriptedGateway:
    def test_hash_keyed_chat(self):
        gw = ScriptedGateway()
        gw.script_chat("what is up", "not much")
        assert gw.chat("what is up", 0.0) == "not much"

    def test_sequence_fallback(self):
        gw = ScriptedGateway(chat_sequence=["first", "second"])
        assert gw.chat("p1", 0.0) == "first"
        assert gw.chat("p2", 0.0) == "second"

    def test_unmatched_call_errors(self):
        gw = ScriptedGateway()
        with pytest.raises(GatewayError):
            gw.chat("never scripted", 0.0)
        with pytest.raises(GatewayError):
            gw.embed("never scripted")

    def test_hash_embedding_rule(self):
        gw = ScriptedGateway(hash_embedding_dim=8)
        assert gw.embed("x") == hash_embedding("x", 8)

    def test_call_log_and_counts(self):
        gw = ScriptedGateway(chat_sequence=["a"], hash_embedding_dim=4)
        gw.chat("p", 0.5)
        gw.embed("q")
        assert gw.call_count("chat") == 1
        assert gw.call_count("embed") == 1

    def test_from_file(self, tmp_path):
        script = {
            "chat": [{"prompt": "hello", "completion": "hi"}],
            "chat_sequence": ["fallback"],
            "hash_embedding_dim": 6,
        }
        path = tmp_path / "script.json"
        path.write_text(json.dumps(script))
        gw = ScriptedGateway.from_file(str(path))
        assert gw.chat("hello", 0.0) == "hi"
        assert gw.chat("unscripted", 0.0) == "fallback"
        assert len(gw.embed("z")) == 6


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status_code = status

    def json(self):
        return self.payload

    def raise_for_status(self):
        if self.status_code >= 400:
            import requests

            raise requests.HTTPError(f"status {self.status_code}")


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


class TestHttpGateway:
    def config(self):
        return GatewayConfig(base_url="http://api.test/v1", chat_model="m-chat")

    def test_chat_wire_format(self, monkeypatch):
        monkeypatch.setenv("DOPPEL_API_KEY", "sk-test")
        session = FakeSession([
            FakeResponse({"choices": [{"message": {"content": "pong"}}]})
        ])
        gw = HttpGateway(self.config(), session=session)
        assert gw.chat("ping", 0.8) == "pong"
        req = session.requests[0]
        assert req["url"] == "http://api.test/v1/chat/completions"
        assert req["json"] == {
            "model": "m-chat",
            "messages": [{"role": "system", "content": "ping"}],
            "temperature": 0.8,
        }
        assert req["headers"]["Authorization"] == "Bearer sk-test"

    def test_embed_wire_format(self, monkeypatch):
        monkeypatch.setenv("DOPPEL_API_KEY", "sk-test")
        session = FakeSession([FakeResponse({"data": [{"embedding": [0.1, 0.2]}]})])
        gw = HttpGateway(self.config(), session=session)
        assert gw.embed("text") == [0.1, 0.2]
        req = session.requests[0]
        assert req["url"] == "http://api.test/v1/embeddings"
        assert req["json"] == {"model": "text-embedding-3-small", "input": "text"}

    def test_transport_failure_wrapped(self, monkeypatch):
        monkeypatch.setenv("DOPPEL_API_KEY", "sk-test")
        session = FakeSession([FakeResponse({}, status=500)])
        gw = HttpGateway(self.config(), session=session)
        with pytest.raises(GatewayError):
            gw.chat("ping", 0.0)


class TestBuildGateway:
    def test_replay_provider(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"chat_sequence": ["ok"]}))
        gw = build_gateway({"provider": "replay", "path": str(path)})
        assert gw.chat("x", 0.0) == "ok"

    def test_unknown_provider(self):
        with pytest.raises(ValueError):
            build_gateway({"provider": "carrier-pigeon"})

    def test_prompt_hash_stable(self):
        assert prompt_hash("abc") == prompt_hash("abc")
        assert prompt_hash("abc") != prompt_hash("abd")
