"""Memory store: generation grammar, stage semantics, invariants, search.

The generation stages are exercised entirely through scripted or pure
fake gateways, so every expected grouping and date span here is computed
by hand (or by a brute-force oracle) before the code under test runs.
"""

from __future__ import annotations

import json
import re
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np
import pytest

from doppel.gateway import GatewayError, ScriptedGateway, hash_embedding
from doppel.memory import (
    GENERATION_ATTEMPTS,
    BuildReport,
    DimensionMismatch,
    MemoryNode,
    MemoryStore,
    StoreInvariantViolation,
    _window_bounds,
    abstract,
    abstraction_prompt,
    build_store,
    consolidate,
    consolidation_prompt,
    cosine_similarity,
    numbered_memories,
    parse_group_lines,
    parse_memory_lines,
    search_tier,
    synthesis_prompt,
    synthesize_first_order,
)

from conftest import conv, msg, node, ts


# --- oracles and fakes --------------------------------------------------------

def oracle_search(nodes, query, k):
    """Brute-force cosine ranking with the same tie rule: descending
    similarity, ascending id."""
    q = np.asarray(query, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    scored = []
    for n_ in nodes:
        v = np.asarray(n_.embedding, dtype=np.float64)
        vn = float(np.linalg.norm(v))
        sim = 0.0 if qn == 0.0 or vn == 0.0 else float(np.dot(v, q) / (vn * qn))
        scored.append((n_.id, sim))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


class PlanGateway:
    """Pure prompt -> completion function for whole-build tests.

    Synthesis turns every rendered message line into one memory line that
    reuses its timestamp; consolidation pairs consecutive entries;
    abstraction lumps everything into one group. Being a pure function of
    the prompt, two runs (or a resumed run) see identical outputs.
    """

    def __init__(self, dim: int = 6):
        self.dim = dim
        self.chat_calls = 0

    def chat(self, prompt: str, temperature: float) -> str:
        self.chat_calls += 1
        if "[BEGIN CONVERSATION]" in prompt:
            body = prompt.split("[BEGIN CONVERSATION]\n", 1)[1]
            body = body.rsplit("\n[END CONVERSATION]", 1)[0]
            out = []
            for line in body.splitlines():
                out.append(f"[{line[:19]}] remembered that {line[20:]}")
            return "\n".join(out)
        count = sum(
            1 for line in prompt.splitlines() if re.match(r"^\d+\. ", line)
        )
        if "consolidated memory per group" in prompt:
            groups = []
            i = 1
            while i <= count:
                members = [str(i)] + ([str(i + 1)] if i + 1 <= count else [])
                groups.append(f"[{', '.join(members)}] episode around item {i}")
                i += 2
            return "\n".join(groups)
        all_indices = ", ".join(str(i) for i in range(1, count + 1))
        return f"[{all_indices}] one recurring pattern"

    def embed(self, text: str) -> list[float]:
        return hash_embedding(text, self.dim)


class CountdownGateway:
    """Delegates to an inner gateway, failing the Nth chat call once."""

    def __init__(self, inner, fail_on_chat_call: int):
        self.inner = inner
        self.fail_on = fail_on_chat_call
        self.chat_calls = 0

    def chat(self, prompt: str, temperature: float) -> str:
        self.chat_calls += 1
        if self.chat_calls == self.fail_on:
            raise GatewayError("injected outage")
        return self.inner.chat(prompt, temperature)

    def embed(self, text: str) -> list[float]:
        return self.inner.embed(text)


def scripted(dim: int = 8) -> ScriptedGateway:
    return ScriptedGateway(hash_embedding_dim=dim)


# --- line grammar -------------------------------------------------------------

def test_parse_memory_lines_well_formed():
    completion = (
        "[2024-03-01 09:15:00] Ana started a pottery class\n"
        "[2024-03-02T18:00:30] Ana fired her first bowl"
    )
    parsed = parse_memory_lines(completion)
    assert parsed == [
        (datetime(2024, 3, 1, 9, 15, 0, tzinfo=timezone.utc), "Ana started a pottery class"),
        (datetime(2024, 3, 2, 18, 0, 30, tzinfo=timezone.utc), "Ana fired her first bowl"),
    ]


def test_parse_memory_lines_skips_prose_and_bad_dates():
    completion = (
        "Here are the memories I found:\n"
        "[2024-99-99 09:15:00] impossible date\n"
        "  [2024-03-01 09:15:00] kept despite indentation  \n"
        "- a bullet that is not a memory line"
    )
    parsed = parse_memory_lines(completion)
    assert [text for _, text in parsed] == ["kept despite indentation"]


def test_parse_memory_lines_empty_for_pure_prose():
    assert parse_memory_lines("No structured output here, sorry.") == []


def test_parse_group_lines_basic():
    assert parse_group_lines("[1, 3] merged\n[2] alone", count=3) == [
        ([1, 3], "merged"),
        ([2], "alone"),
    ]


def test_parse_group_lines_repairs_bad_indices():
    completion = (
        "[1, 9] out of range partner dropped\n"
        "[12] fully out of range\n"
        "[2, 2, ] dupe and stray comma\n"
        "[2, x] letters disqualify the whole line"
    )
    parsed = parse_group_lines(completion, count=3)
    assert parsed == [
        ([1], "out of range partner dropped"),
        ([2], "dupe and stray comma"),
    ]


def test_parse_group_lines_nothing_parses():
    assert parse_group_lines("I would group them thematically.", count=4) == []


# --- synthesis ----------------------------------------------------------------

def _two_line_completion(c) -> str:
    return (
        f"[{c.messages[1].timestamp:%Y-%m-%d %H:%M:%S}] Ana mentioned line 1\n"
        f"[{c.messages[3].timestamp:%Y-%m-%d %H:%M:%S}] Ana mentioned line 3"
    )


def test_synthesize_two_nodes_from_scripted_lines():
    c = conv("conv-00000", "Ana", [msg("Ana", ts(minutes=i), f"note {i}") for i in range(4)])
    gw = scripted()
    gw.script_chat(synthesis_prompt(c), _two_line_completion(c))
    nodes = synthesize_first_order(c, gw)
    assert [n.id for n in nodes] == ["m1-000000", "m1-000001"]
    for n_ in nodes:
        assert n_.tier == 1
        assert n_.sources == ("conv-00000",)
        assert n_.children == ()
        assert len(n_.embedding) == 8
        assert c.start <= n_.date_start <= c.end
        assert n_.date_start == n_.date_end
    assert nodes[0].text == "Ana mentioned line 1"
    assert nodes[1].date_start == c.messages[3].timestamp


def test_synthesize_clamps_timestamps_into_conversation_range():
    c = conv("conv-00000", "Ana", [msg("Ana", ts(minutes=i)) for i in range(3)])
    completion = (
        "[2019-01-01 00:00:00] remembered too early\n"
        "[2030-01-01 00:00:00] remembered too late"
    )
    gw = scripted()
    gw.script_chat(synthesis_prompt(c), completion)
    early, late = synthesize_first_order(c, gw)
    assert early.date_start == c.start
    assert late.date_start == c.end


def test_synthesize_retries_then_succeeds():
    c = conv("conv-00000", "Ana", [msg("Ana", ts())])
    good = f"[{ts():%Y-%m-%d %H:%M:%S}] Ana said hello"
    gw = ScriptedGateway(chat_sequence=["no lines here", good], hash_embedding_dim=8)
    nodes = synthesize_first_order(c, gw)
    assert len(nodes) == 1
    assert gw.call_count("chat") == 2


def test_synthesize_skips_after_exhausted_retries():
    c = conv("conv-00042", "Ana", [msg("Ana", ts())])
    gw = ScriptedGateway(
        chat_sequence=["prose"] * GENERATION_ATTEMPTS, hash_embedding_dim=8
    )
    report = BuildReport()
    nodes = synthesize_first_order(c, gw, report=report)
    assert nodes == []
    assert report.skipped_conversations == ["conv-00042"]
    assert gw.call_count("chat") == GENERATION_ATTEMPTS


def test_synthesize_accepts_empty_completion_as_no_memories():
    c = conv("conv-00000", "Ana", [msg("Ana", ts())])
    gw = scripted()
    gw.script_chat(synthesis_prompt(c), "   \n  ")
    report = BuildReport()
    assert synthesize_first_order(c, gw, report=report) == []
    assert report.skipped_conversations == []
    assert gw.call_count("chat") == 1


def test_synthesize_single_message_range_containment():
    c = conv("conv-00000", "Ana", [msg("Ana", ts(), "only message")])
    gw = scripted()
    gw.script_chat(
        synthesis_prompt(c), f"[{ts():%Y-%m-%d %H:%M:%S}] Ana sent one message"
    )
    (only,) = synthesize_first_order(c, gw)
    assert only.date_start == only.date_end == ts()


def test_synthesis_prompt_contains_conversation_and_format_rule():
    c = conv("conv-00000", "Ana", [msg("Ben", ts(), "hi"), msg("Ana", ts(minutes=1), "hey")])
    prompt = synthesis_prompt(c)
    assert "[YYYY-MM-DD HH:MM:SS] <memory statement>" in prompt
    assert "2024-01-01 12:00:00 Ben: hi" in prompt
    assert prompt.index("[BEGIN CONVERSATION]") < prompt.index("2024-01-01 12:00:00 Ben: hi")
    assert prompt.rstrip().endswith("[END CONVERSATION]")


# --- grouping stages ----------------------------------------------------------

def tier1_nodes(n: int) -> list[MemoryNode]:
    return [
        node(f"m1-{i:06d}", 1, ts(days=i), sources=("conv-00000",)) for i in range(n)
    ]


def test_window_bounds_cover_everything():
    assert _window_bounds(0, 50, 10) == []
    assert _window_bounds(7, 50, 10) == [(0, 7)]
    assert _window_bounds(120, 50, 10) == [(0, 50), (40, 90), (80, 120)]
    for n, window, overlap in [(1, 1, 0), (9, 4, 1), (200, 50, 10), (51, 50, 10)]:
        bounds = _window_bounds(n, window, overlap)
        seen = set()
        for lo, hi in bounds:
            assert 0 <= lo < hi <= n
            seen.update(range(lo, hi))
        assert seen == set(range(n))
        assert bounds[-1][1] == n


def test_consolidate_groups_per_script():
    inputs = tier1_nodes(3)
    gw = scripted()
    gw.script_chat(
        consolidation_prompt(inputs), "[1, 2] first two days\n[3] the third day"
    )
    out = consolidate(inputs, gw)
    assert [n.id for n in out] == ["m2-000000", "m2-000001"]
    assert out[0].children == ("m1-000000", "m1-000001")
    assert out[1].children == ("m1-000002",)
    assert out[0].tier == 2
    assert out[0].date_start == inputs[0].date_start
    assert out[0].date_end == inputs[1].date_end
    assert out[1].date_start == out[1].date_end == inputs[2].date_start


def test_consolidate_singleton():
    inputs = tier1_nodes(1)
    gw = scripted()
    gw.script_chat(consolidation_prompt(inputs), "[1] the only memory")
    out = consolidate(inputs, gw)
    assert len(out) == 1
    assert out[0].children == ("m1-000000",)


def test_consolidate_repairs_unknown_index_and_falls_back():
    inputs = tier1_nodes(3)
    gw = scripted()
    gw.script_chat(consolidation_prompt(inputs), "[1, 7] repaired group\n[9] ghost")
    report = BuildReport()
    out = consolidate(inputs, gw, report=report)
    children = sorted(n.children for n in out)
    assert children == [("m1-000000",), ("m1-000001",), ("m1-000002",)]
    assert report.identity_fallbacks == 2
    texts = {n.children[0]: n.text for n in out}
    assert texts["m1-000000"] == "repaired group"
    assert texts["m1-000001"] == inputs[1].text


def test_consolidate_malformed_window_falls_back_to_identity():
    inputs = tier1_nodes(4)
    gw = ScriptedGateway(
        chat_sequence=["nothing parseable"] * GENERATION_ATTEMPTS,
        hash_embedding_dim=8,
    )
    report = BuildReport()
    out = consolidate(inputs, gw, report=report)
    assert report.malformed_windows == 1
    assert report.identity_fallbacks == 4
    assert sorted(n.children for n in out) == [(n_.id,) for n_ in inputs]
    for parent, child in zip(sorted(out, key=lambda n: n.children), inputs):
        assert parent.text == child.text
        assert parent.date_start == child.date_start


def test_consolidate_empty_input_rejected():
    with pytest.raises(ValueError):
        consolidate([], scripted())
    with pytest.raises(ValueError):
        abstract([], scripted())


def test_consolidate_windowed_first_claim_wins():
    # window 5 with overlap 1 over 7 nodes -> windows [0:5] and [4:7];
    # node 4 sits in both, and the second window tries to reclaim it.
    inputs = tier1_nodes(7)
    gw = scripted()
    gw.script_chat(
        consolidation_prompt(inputs[0:5]), "[1, 2, 3] early\n[4, 5] middle"
    )
    gw.script_chat(consolidation_prompt(inputs[4:7]), "[1, 2, 3] late")
    out = consolidate(inputs, gw, window=5)
    child_sets = [set(n.children) for n in out]
    assert child_sets == [
        {"m1-000000", "m1-000001", "m1-000002"},
        {"m1-000003", "m1-000004"},
        {"m1-000005", "m1-000006"},
    ]
    claimed = [c for n in out for c in n.children]
    assert len(claimed) == len(set(claimed)) == 7


def test_grouping_partition_and_span_random_scripts():
    # Random scripted partitions must come back exactly as scripted, with
    # parent ranges spanning member ranges; checked against the partition
    # itself as the oracle.
    import random

    for seed in range(25):
        rng = random.Random(seed)
        n = rng.randint(1, 17)
        inputs = tier1_nodes(n)
        indices = list(range(1, n + 1))
        rng.shuffle(indices)
        groups: list[list[int]] = []
        i = 0
        while i < len(indices):
            size = min(rng.randint(1, 4), len(indices) - i)
            groups.append(sorted(indices[i : i + size]))
            i += size
        completion = "\n".join(
            f"[{', '.join(map(str, g))}] group {gi}" for gi, g in enumerate(groups)
        )
        gw = scripted()
        gw.script_chat(consolidation_prompt(inputs), completion)
        out = consolidate(inputs, gw)

        expected = sorted(tuple(inputs[i - 1].id for i in g) for g in groups)
        assert sorted(n_.children for n_ in out) == expected
        for parent in out:
            members = [inputs[int(c[3:])] for c in parent.children]
            assert parent.date_start == min(m.date_start for m in members)
            assert parent.date_end == max(m.date_end for m in members)


def test_abstract_builds_tier3():
    mids = [
        node(f"m2-{i:06d}", 2, ts(days=i), f"episode {i}",
             children=(f"m1-{i:06d}",)) for i in range(3)
    ]
    gw = scripted()
    gw.script_chat(abstraction_prompt(mids), "[1, 3] a recurring thing\n[2] one-off")
    out = abstract(mids, gw)
    assert [n.tier for n in out] == [3, 3]
    assert [n.id for n in out] == ["m3-000000", "m3-000001"]
    assert out[0].children == ("m2-000000", "m2-000002")
    assert out[0].date_start == mids[0].date_start
    assert out[0].date_end == mids[2].date_end


def test_numbered_memories_format():
    nodes = [
        node("m1-000000", 1, ts(), "fact a"),
        node("m1-000001", 1, ts(), "fact b", end=ts(days=2)),
    ]
    lines = numbered_memories(nodes).splitlines()
    assert lines[0] == "1. [2024-01-01 12:00:00] fact a"
    assert lines[1] == "2. [2024-01-01 12:00:00 .. 2024-01-03 12:00:00] fact b"


def test_stage_prompts_state_the_grammar():
    nodes = tier1_nodes(2)
    for prompt in (consolidation_prompt(nodes), abstraction_prompt(nodes)):
        assert "comma-separated" in prompt
        assert "1. [" in prompt
        assert "2. [" in prompt


# --- store invariants ---------------------------------------------------------

def test_small_store_is_valid(small_store):
    small_store.validate()
    assert small_store.embed_dim == 8
    assert len(small_store.tier_nodes(1)) == 10
    assert len(small_store.tier_nodes(2)) == 4
    assert len(small_store.tier_nodes(3)) == 2


def _tamper(store: MemoryStore, node_id: str, **changes) -> MemoryStore:
    store.nodes[node_id] = replace(store.nodes[node_id], **changes)
    store._tier_cache.clear()
    return store


def test_validate_rejects_wrong_tier_child(small_store):
    _tamper(small_store, "m3-000000", children=("m2-000000", "m1-000005"))
    with pytest.raises(StoreInvariantViolation):
        small_store.validate()


def test_validate_rejects_unknown_child(small_store):
    _tamper(small_store, "m2-000000", children=("m1-000000", "m1-999999"))
    with pytest.raises(StoreInvariantViolation):
        small_store.validate()


def test_validate_rejects_double_claimed_child(small_store):
    # m2-000001 normally owns m1-000003/m1-000004; make it also claim
    # m1-000000, which m2-000000 already owns. Dates widen to keep the
    # span check from firing first.
    n0 = small_store.nodes["m1-000000"]
    _tamper(
        small_store, "m2-000001",
        children=("m1-000000", "m1-000003", "m1-000004"),
        date_start=n0.date_start,
    )
    with pytest.raises(StoreInvariantViolation, match="multiple"):
        small_store.validate()


def test_validate_rejects_bad_date_span(small_store):
    _tamper(small_store, "m2-000000", date_end=ts(days=30))
    with pytest.raises(StoreInvariantViolation, match="date_end"):
        small_store.validate()


def test_validate_rejects_tier1_with_children(small_store):
    _tamper(small_store, "m1-000000", children=("m1-000001",))
    with pytest.raises(StoreInvariantViolation):
        small_store.validate()


def test_validate_rejects_tier1_without_sources(small_store):
    _tamper(small_store, "m1-000000", sources=())
    with pytest.raises(StoreInvariantViolation):
        small_store.validate()


def test_validate_rejects_out_of_range_tier(small_store):
    small_store.nodes["m9-000000"] = replace(
        small_store.nodes["m1-000000"], id="m9-000000", tier=9
    )
    with pytest.raises(StoreInvariantViolation):
        small_store.validate()


def test_unreachable_tier1_fails_only_when_reachability_required():
    store = MemoryStore()
    a = node("m1-000000", 1, ts(), sources=("conv-00000",))
    b = node("m1-000001", 1, ts(days=1), sources=("conv-00000",))
    t2 = node("m2-000000", 2, ts(), "only a", children=("m1-000000",))
    t3 = node("m3-000000", 3, ts(), "top", children=("m2-000000",))
    for n_ in (a, b, t2, t3):
        store.add(n_)
    with pytest.raises(StoreInvariantViolation, match="not covered"):
        store.validate(require_reachability=True)
    store.validate(require_reachability=False)


def test_add_rejects_duplicate_id_and_dim_drift():
    store = MemoryStore()
    store.add(node("m1-000000", 1, ts(), sources=("c",)))
    with pytest.raises(StoreInvariantViolation, match="duplicate"):
        store.add(node("m1-000000", 1, ts(), sources=("c",)))
    with pytest.raises(StoreInvariantViolation, match="dim"):
        store.add(node("m1-000001", 1, ts(), sources=("c",), dim=5))


def test_validate_rejects_embedding_dim_mismatch(small_store):
    _tamper(small_store, "m1-000003", embedding=(0.1, 0.2))
    with pytest.raises(StoreInvariantViolation, match="dim"):
        small_store.validate()


# --- serialization ------------------------------------------------------------

def test_save_load_round_trip_is_bit_exact(small_store, tmp_path):
    p1 = tmp_path / "store.json"
    p2 = tmp_path / "store2.json"
    small_store.save(str(p1))
    loaded = MemoryStore.load(str(p1))
    loaded.validate()
    assert loaded.to_dict() == small_store.to_dict()
    for nid, orig in small_store.nodes.items():
        assert loaded.nodes[nid].embedding == orig.embedding
    loaded.save(str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_store_document_shape(small_store, tmp_path):
    path = tmp_path / "store.json"
    small_store.save(str(path))
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert set(raw) == {"version", "embed_dim", "built_at", "nodes"}
    assert raw["version"] == "1"
    assert raw["embed_dim"] == 8
    fields = {"id", "tier", "text", "date_start", "date_end", "children", "sources", "embedding"}
    assert all(set(n_) == fields for n_ in raw["nodes"])


def test_load_rejects_versionless_document(tmp_path):
    path = tmp_path / "store.json"
    path.write_text('{"embed_dim": 2, "nodes": []}', encoding="utf-8")
    with pytest.raises(StoreInvariantViolation, match="version"):
        MemoryStore.load(str(path))


# --- tier search ----------------------------------------------------------------

def two_vector_store() -> MemoryStore:
    store = MemoryStore()
    a = replace(node("m1-000000", 1, ts(), sources=("c",)), embedding=(1.0, 0.0))
    b = replace(node("m1-000001", 1, ts(), sources=("c",)), embedding=(0.0, 1.0))
    store.embed_dim = 0
    store.nodes.clear()
    store.add(a)
    store.add(b)
    return store


def test_search_exact_match_ranks_first():
    store = two_vector_store()
    ranked = search_tier(store, 1, [1.0, 0.0], k=2)
    assert [n.id for n, _ in ranked] == ["m1-000000", "m1-000001"]
    assert ranked[0][1] == pytest.approx(1.0)
    assert ranked[1][1] == pytest.approx(0.0)


def test_search_known_cosine_value():
    store = MemoryStore()
    store.add(replace(node("m1-000000", 1, ts(), sources=("c",)), embedding=(1.0, 1.0)))
    ((_, sim),) = search_tier(store, 1, [1.0, 0.0], k=1)
    assert sim == pytest.approx(0.7071067811865475, abs=1e-12)


def test_search_tie_broken_by_ascending_id():
    store = MemoryStore()
    same = (0.6, 0.8)
    for nid in ["m1-000003", "m1-000001", "m1-000002"]:
        store.add(replace(node(nid, 1, ts(), sources=("c",)), embedding=same))
    ranked = search_tier(store, 1, [0.6, 0.8], k=3)
    assert [n.id for n, _ in ranked] == ["m1-000001", "m1-000002", "m1-000003"]


def test_search_zero_norm_vectors_score_zero():
    store = MemoryStore()
    store.add(replace(node("m1-000000", 1, ts(), sources=("c",)), embedding=(0.0, 0.0)))
    store.add(replace(node("m1-000001", 1, ts(), sources=("c",)), embedding=(1.0, 0.0)))
    ranked = search_tier(store, 1, [1.0, 0.0], k=2)
    assert [n.id for n, _ in ranked] == ["m1-000001", "m1-000000"]
    assert ranked[1][1] == 0.0
    ranked_zero_query = search_tier(store, 1, [0.0, 0.0], k=2)
    assert all(sim == 0.0 for _, sim in ranked_zero_query)
    assert cosine_similarity(np.zeros(2), np.ones(2)) == 0.0


def test_search_dimension_mismatch():
    store = two_vector_store()
    with pytest.raises(DimensionMismatch):
        search_tier(store, 1, [1.0, 0.0, 0.0], k=1)


def test_search_rejects_bad_k_and_handles_empty_tier():
    store = two_vector_store()
    with pytest.raises(ValueError):
        search_tier(store, 1, [1.0, 0.0], k=0)
    assert search_tier(store, 2, [1.0, 0.0], k=3) == []


def test_search_matches_brute_force_oracle():
    import random

    for seed in range(60):
        rng = random.Random(seed)
        dim = rng.choice([3, 5])
        count = rng.randint(1, 40)
        store = MemoryStore()
        nodes = []
        for i in range(count):
            if nodes and rng.random() < 0.25:
                vec = nodes[rng.randrange(len(nodes))].embedding
            else:
                vec = tuple(rng.uniform(-1, 1) for _ in range(dim))
            n_ = replace(node(f"m1-{i:06d}", 1, ts(days=i), sources=("c",)), embedding=vec)
            store.add(n_)
            nodes.append(n_)
        query = [rng.uniform(-1, 1) for _ in range(dim)]
        k = rng.randint(1, 20)
        got = search_tier(store, 1, query, k)
        want = oracle_search(nodes, query, k)
        assert [n.id for n, _ in got] == [nid for nid, _ in want]
        for (_, sim), (_, want_sim) in zip(got, want):
            assert sim == pytest.approx(want_sim, abs=1e-9)


# --- whole builds and checkpointing ---------------------------------------------

def plan_convs(n_convs: int = 3, msgs_per: int = 4) -> list:
    out = []
    for ci in range(n_convs):
        messages = [
            msg("Ana" if i % 2 else "Ben", ts(days=ci, minutes=i), f"topic {ci} item {i}")
            for i in range(msgs_per)
        ]
        out.append(conv(f"conv-{ci:05d}", "Ana", messages))
    return out


def test_build_store_empty_input():
    store = build_store([], PlanGateway())
    store.validate()
    assert store.nodes == {}


def test_build_store_three_tiers_and_reachability():
    convs = plan_convs()
    store = build_store(convs, PlanGateway(), built_at="2024-06-01T00:00:00Z")
    store.validate(require_reachability=True)
    assert len(store.tier_nodes(1)) == 12
    assert len(store.tier_nodes(2)) == 6
    assert len(store.tier_nodes(3)) == 1
    assert store.built_at == "2024-06-01T00:00:00Z"
    assert {s for n_ in store.tier_nodes(1) for s in n_.sources} == {
        "conv-00000", "conv-00001", "conv-00002"
    }


def test_build_store_resume_after_stage1_crash(tmp_path):
    convs = plan_convs()
    baseline = build_store(convs, PlanGateway())

    ckpt = tmp_path / "ckpt"
    flaky = CountdownGateway(PlanGateway(), fail_on_chat_call=2)
    with pytest.raises(GatewayError):
        build_store(convs, flaky, checkpoint_dir=str(ckpt))
    assert (ckpt / "stage1.jsonl").exists()

    resumed = build_store(convs, PlanGateway(), checkpoint_dir=str(ckpt))
    assert resumed.to_dict() == baseline.to_dict()


def test_build_store_resume_after_stage3_crash(tmp_path):
    convs = plan_convs()
    baseline = build_store(convs, PlanGateway())

    # chat calls: 3 synthesis + 1 consolidation + 1 abstraction
    ckpt = tmp_path / "ckpt"
    flaky = CountdownGateway(PlanGateway(), fail_on_chat_call=5)
    with pytest.raises(GatewayError):
        build_store(convs, flaky, checkpoint_dir=str(ckpt))
    assert (ckpt / "stage2.json").exists()

    fresh = PlanGateway()
    resumed = build_store(convs, fresh, checkpoint_dir=str(ckpt))
    assert fresh.chat_calls == 1
    assert resumed.to_dict() == baseline.to_dict()


def test_build_store_checkpointed_run_matches_plain_run(tmp_path):
    convs = plan_convs(n_convs=2, msgs_per=3)
    plain = build_store(convs, PlanGateway())
    ckpt_run = build_store(convs, PlanGateway(), checkpoint_dir=str(tmp_path / "c"))
    assert ckpt_run.to_dict() == plain.to_dict()


def test_build_store_saved_files_identical_across_runs(tmp_path):
    convs = plan_convs()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    build_store(convs, PlanGateway()).save(str(p1))
    build_store(convs, PlanGateway()).save(str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_build_store_records_skipped_conversations():
    convs = plan_convs(n_convs=2)

    class MuteFirst(PlanGateway):
        def chat(self, prompt: str, temperature: float) -> str:
            if "topic 0" in prompt and "[BEGIN CONVERSATION]" in prompt:
                self.chat_calls += 1
                return "no memory lines, just chatter"
            return super().chat(prompt, temperature)

    report = BuildReport()
    store = build_store(convs, MuteFirst(), report=report)
    store.validate()
    assert report.skipped_conversations == ["conv-00000"]
    assert {s for n_ in store.tier_nodes(1) for s in n_.sources} == {"conv-00001"}
