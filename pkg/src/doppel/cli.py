"""Command line surface: one `doppel` entry point with subcommands.

ingest          parse and clean a message export into conversations
dataset build   turn conversations into a capped SFT dataset
memory build    synthesize the three-tier memory store
arena serve     run the evaluation HTTP server
analyze report  compute statistics over a trajectory store
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import timedelta

from . import analysis, dataset, ingest, memory
from .arena.core import Arena, TrajectoryStore, load_prompt_pool
from .arena.replies import PersonaReplyBackend, load_roster
from .arena.server import create_app
from .gateway import build_gateway


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_ingest(args) -> int:
    with open(args.input, "rb") as fh:
        raw = fh.read()
    messages, parse_report = ingest.parse_export(raw, args.format)
    gap = timedelta(hours=args.gap_hours)
    conversations = ingest.segment_conversations(messages, args.owner, gap)
    if args.consent:
        ledger = ingest.ConsentLedger.from_dict(_read_json(args.consent))
        conversations = ingest.redact_nonconsenting(conversations, ledger, gap)
    policy = ingest.QualityPolicy()
    if args.policy:
        policy = ingest.QualityPolicy.from_dict(_read_json(args.policy))
    conversations, filter_report = ingest.filter_quality(conversations, policy, gap)
    ingest.save_conversations(conversations, args.out)
    summary = {
        "parsed": parse_report.parsed,
        "malformed": parse_report.malformed,
        "conversations": len(conversations),
        "messages": sum(len(c.messages) for c in conversations),
        "filtered": filter_report.to_dict(),
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_dataset_build(args) -> int:
    conversations = ingest.load_conversations(args.input)
    tier = dataset.get_tier(args.tier)
    if args.cap is not None:
        tier = dataclasses.replace(tier, cap=args.cap)
    examples = dataset.build_examples(conversations, args.owner)
    examples = dataset.cap_dataset(examples, tier)
    dataset.save_examples(examples, args.out)
    if args.emit_config:
        with open(args.emit_config, "w", encoding="utf-8") as fh:
            json.dump(dataset.emit_finetune_config(tier), fh, indent=2)
            fh.write("\n")
    print(json.dumps({"tier": tier.name, "examples": len(examples)}))
    return 0


def cmd_memory_build(args) -> int:
    conversations = ingest.load_conversations(args.conversations)
    gw = build_gateway(_read_json(args.gateway))
    report = memory.BuildReport()
    store = memory.build_store(
        conversations,
        gw,
        batch_size=args.batch,
        checkpoint_dir=args.checkpoint,
        built_at=args.built_at,
        report=report,
    )
    store.save(args.out)
    summary = {
        "nodes": {tier: len(store.tier_nodes(tier)) for tier in (1, 2, 3)},
        "skipped_conversations": report.skipped_conversations,
        "malformed_windows": report.malformed_windows,
        "identity_fallbacks": report.identity_fallbacks,
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_arena_serve(args) -> int:
    import uvicorn

    roster = load_roster(args.roster)
    pool = load_prompt_pool(args.prompts)
    arena = Arena(
        roster.order,
        pool,
        PersonaReplyBackend(roster.entries),
        seed=roster.seed,
        deadline_s=roster.deadline_s,
        idle_yield_s=roster.idle_yield_s,
        store=TrajectoryStore(args.store),
    )
    uvicorn.run(create_app(arena), host=args.host, port=args.port)
    return 0


def cmd_analyze_report(args) -> int:
    try:
        report = analysis.load_report(args.store)
    except analysis.StoreCorrupt as exc:
        print(f"store corrupt: {exc}", file=sys.stderr)
        return 2
    print(analysis.render_report(report))
    if args.csv:
        analysis.write_csv(report, args.csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doppel")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a message export into conversations")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="native")
    p.add_argument("--owner", required=True, help="display name of the impersonated person")
    p.add_argument("--gap-hours", type=float, default=6.0)
    p.add_argument("--policy", help="quality policy JSON")
    p.add_argument("--consent", help="consent ledger JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p_dataset = sub.add_parser("dataset", help="dataset operations")
    dsub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p = dsub.add_parser("build", help="build an SFT dataset from conversations")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--owner", required=True)
    p.add_argument("--tier", default="B4K")
    p.add_argument("--cap", type=int, help="override the tier's example cap")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-config", help="also write the fine-tune config JSON here")
    p.set_defaults(fn=cmd_dataset_build)

    p_memory = sub.add_parser("memory", help="memory store operations")
    msub = p_memory.add_subparsers(dest="memory_command", required=True)
    p = msub.add_parser("build", help="build the three-tier memory store")
    p.add_argument("--conversations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--gateway", required=True, help="gateway config JSON")
    p.add_argument("--checkpoint", help="directory for resumable stage checkpoints")
    p.add_argument("--built-at", default="", help="timestamp label stored with the build")
    p.set_defaults(fn=cmd_memory_build)

    p_arena = sub.add_parser("arena", help="evaluation arena")
    asub = p_arena.add_subparsers(dest="arena_command", required=True)
    p = asub.add_parser("serve", help="run the arena HTTP server")
    p.add_argument("--roster", required=True)
    p.add_argument("--prompts", help="prompt pool JSON (default: packaged pool)")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_arena_serve)

    p_analyze = sub.add_parser("analyze", help="statistics over finished sessions")
    ansub = p_analyze.add_subparsers(dest="analyze_command", required=True)
    p = ansub.add_parser("report", help="print the metrics table")
    p.add_argument("--store", required=True)
    p.add_argument("--csv", help="also write rows as CSV here")
    p.set_defaults(fn=cmd_analyze_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
