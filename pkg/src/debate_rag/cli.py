"""Command line entry point: ``drag ingest | run | score | stats``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from debate_rag import prompts
from debate_rag.llm import Gateway, OpenAICompatibleBackend, ScriptedBackend
from debate_rag.pipeline import (
    Components,
    PipelineConfig,
    RunMode,
    debate_stats,
    load_dataset,
    read_transcripts,
    rescore_entries,
    run_dataset,
    write_outputs,
)
from debate_rag.evaluation import aggregate
from debate_rag.retriever import RetrieverConfig, ingest_corpus, load_index, read_corpus_jsonl, save_index

ENV_KEYS = {"api_base": "DRAG_API_BASE"}


def resolve_config(cli: dict, env: dict | None = None, config_file: str | None = None) -> PipelineConfig:
    """Merge settings with precedence CLI flag > environment > config file > default."""
    env = os.environ if env is None else env
    known = {f.name for f in fields(PipelineConfig)}
    merged: dict = {}
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
    for key, var in ENV_KEYS.items():
        if env.get(var):
            merged[key] = env[var]
    merged.update({k: v for k, v in cli.items() if k in known and v is not None})
    return PipelineConfig(**merged)


def build_components(config: PipelineConfig) -> Components:
    if config.backend == "scripted":
        if not config.script:
            raise ValueError("--backend scripted requires --script FILE")
        backend = ScriptedBackend.from_file(config.script)
    elif config.backend == "api":
        backend = OpenAICompatibleBackend(config.api_base, timeout=config.timeout)
    else:
        raise ValueError(f"unknown backend: {config.backend!r}")
    gateway = Gateway(backend, model_id=config.model, temperature=config.temperature,
                      max_tokens=config.max_tokens, budget=config.call_budget)
    index = None
    if config.index:
        index = load_index(config.index)
    elif config.corpus:
        index = ingest_corpus(read_corpus_jsonl(config.corpus), RetrieverConfig(k_default=max(config.k, 1)))
    if config.mode.uses_retrieval and index is None:
        raise ValueError(f"mode {config.mode.value} needs --corpus or --index")
    return Components(gateway, index, prompts.load_templates(config.templates_dir))


def _cmd_ingest(args) -> int:
    index = ingest_corpus(read_corpus_jsonl(args.corpus), RetrieverConfig(k1=args.k1, b=args.b))
    save_index(index, args.out)
    print(f"indexed {index.doc_count} documents -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    cli = {k.replace("-", "_"): v for k, v in vars(args).items()}
    cli["call_budget"] = cli.pop("budget", None)
    cli["templates_dir"] = cli.pop("templates", None)
    config = resolve_config(cli, config_file=args.config)
    if not config.dataset:
        raise ValueError("--dataset is required")
    if not config.out:
        raise ValueError("--out is required")
    instances = load_dataset(config.dataset, config.limit, config.seed)
    entries = run_dataset(instances, config, build_components(config))
    transcripts, report = write_outputs(entries, config, config.out)
    with open(report, encoding="utf-8") as fh:
        print(json.dumps(json.load(fh)["metrics"], indent=2, sort_keys=True))
    return 0


def _cmd_score(args) -> int:
    report = aggregate(rescore_entries(read_transcripts(args.transcripts))).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_stats(args) -> int:
    print(json.dumps(debate_stats(read_transcripts(args.transcripts)), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drag", description="Debate-augmented retrieval QA")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="index a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("run", help="answer a dataset and write transcripts + report")
    p.add_argument("--config", help="JSON file of run settings")
    p.add_argument("--mode", choices=[m.value for m in RunMode])
    p.add_argument("--dataset")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus")
    src.add_argument("--index")
    p.add_argument("--k", type=int)
    p.add_argument("--ret-rounds", type=int)
    p.add_argument("--res-rounds", type=int)
    p.add_argument("--epsilon", type=int)
    p.add_argument("--max-pool-size", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["scripted", "api"])
    p.add_argument("--script")
    p.add_argument("--api-base")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--templates", help="directory of prompt template overrides")
    p.add_argument("--out")
    p.add_argument("--parallel", type=int)
    p.add_argument("--budget", type=int, help="max LLM calls per question")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("score", help="recompute the report from a transcripts file")
    p.add_argument("transcripts")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("stats", help="average debate rounds and query counts")
    p.add_argument("transcripts")
    p.set_defaults(func=_cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    del args.func, args.verbose, args.command
    try:
        return func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
